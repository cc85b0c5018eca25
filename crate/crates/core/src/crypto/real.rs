use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use bytes::{Bytes, BytesMut};
use rand::rngs::OsRng;
use rand::RngCore;
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};

use super::{
    CryptoError, CryptoProvider, KeyPair, KeyRef, PrivateInner, PublicInner, PublicKey, Sealed,
    SealedBody, SymKey, SYM_KEY_LEN,
};
use crate::group::UserId;

const NONCE_LEN: usize = 12;
const RSA_BITS: usize = 2048;

/// AES-256-GCM for symmetric sealing and RSA-2048 with OAEP/SHA-256 for
/// asymmetric sealing. Opening never consults the `sealed_by` tag: a wrong
/// key fails because authentication or padding fails.
#[derive(Debug, Default)]
pub struct RealProvider {
    _private: (),
}

impl RealProvider {
    pub fn new() -> Self {
        RealProvider { _private: () }
    }
}

/// RSA key generation dominates small real-crypto runs, so private keys are
/// generated once per user id per process.
fn rsa_key_for(owner: UserId) -> RsaPrivateKey {
    static CACHE: OnceLock<Mutex<HashMap<UserId, RsaPrivateKey>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().expect("rsa key cache poisoned");
    guard
        .entry(owner)
        .or_insert_with(|| RsaPrivateKey::new(&mut OsRng, RSA_BITS).expect("rsa keygen"))
        .clone()
}

fn cipher_for(key: &SymKey) -> Result<Aes256Gcm, CryptoError> {
    let secret = key.secret().ok_or(CryptoError::WrongKey)?;
    Ok(Aes256Gcm::new(secret.into()))
}

impl CryptoProvider for RealProvider {
    fn name(&self) -> &'static str {
        "real"
    }

    fn new_secret(&mut self) -> Option<[u8; SYM_KEY_LEN]> {
        let mut secret = [0u8; SYM_KEY_LEN];
        OsRng.fill_bytes(&mut secret);
        Some(secret)
    }

    fn seal_sym(&mut self, key: &SymKey, payload: &Bytes) -> SealedBody {
        let cipher = cipher_for(key).expect("real provider keys carry secrets");
        let mut nonce = [0u8; NONCE_LEN];
        OsRng.fill_bytes(&mut nonce);
        let ct = cipher
            .encrypt(Nonce::from_slice(&nonce), payload.as_ref())
            .expect("aes-gcm encryption");
        let mut out = BytesMut::with_capacity(NONCE_LEN + ct.len());
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ct);
        SealedBody::Cipher(out.freeze())
    }

    fn open_sym(&self, key: &SymKey, sealed: &Sealed) -> Result<Bytes, CryptoError> {
        let SealedBody::Cipher(ct) = &sealed.body else {
            return Err(CryptoError::WrongKey);
        };
        if ct.len() < NONCE_LEN {
            return Err(CryptoError::WrongKey);
        }
        let cipher = cipher_for(key)?;
        let (nonce, body) = ct.split_at(NONCE_LEN);
        cipher
            .decrypt(Nonce::from_slice(nonce), body)
            .map(Bytes::from)
            .map_err(|_| CryptoError::WrongKey)
    }

    fn gen_keypair(&mut self, owner: UserId) -> KeyPair {
        let private = rsa_key_for(owner);
        KeyPair {
            public: PublicKey {
                owner,
                inner: PublicInner::Rsa(RsaPublicKey::from(&private)),
            },
            private: PrivateInner::Rsa(Box::new(private)),
        }
    }

    fn seal_asym(&mut self, public: &PublicKey, payload: &Bytes) -> Result<SealedBody, CryptoError> {
        let PublicInner::Rsa(pk) = &public.inner else {
            return Err(CryptoError::WrongKey);
        };
        pk.encrypt(&mut OsRng, Oaep::new::<sha2::Sha256>(), payload)
            .map(|ct| SealedBody::Cipher(Bytes::from(ct)))
            // OAEP/SHA-256 caps a 2048-bit message at 190 bytes.
            .map_err(|_| CryptoError::PayloadTooLarge)
    }

    fn open_asym(&self, pair: &KeyPair, sealed: &Sealed) -> Result<Bytes, CryptoError> {
        let (PrivateInner::Rsa(sk), SealedBody::Cipher(ct)) = (&pair.private, &sealed.body) else {
            return Err(CryptoError::WrongKey);
        };
        sk.decrypt(Oaep::new::<sha2::Sha256>(), ct)
            .map(Bytes::from)
            .map_err(|_| CryptoError::WrongKey)
    }

    fn export_key(&self, key: &SymKey) -> Bytes {
        Bytes::copy_from_slice(key.secret().expect("real provider keys carry secrets"))
    }

    fn import_key(&self, key_ref: KeyRef, bytes: &[u8]) -> Result<SymKey, CryptoError> {
        let secret: [u8; SYM_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::MalformedKey)?;
        Ok(SymKey {
            key_ref,
            secret: Some(secret),
        })
    }
}
