use bytes::{BufMut, Bytes, BytesMut};

use super::{
    CryptoError, CryptoProvider, KeyPair, KeyRef, PrivateInner, PublicInner, PublicKey, Sealed,
    SealedBody, SealedBy, SymKey, SYM_KEY_LEN,
};
use crate::group::UserId;

/// "Perfect crypto": sealing wraps the plaintext in a tagged envelope and
/// opening succeeds iff the key identity and version match the tag.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModelProvider;

impl CryptoProvider for ModelProvider {
    fn name(&self) -> &'static str {
        "model"
    }

    fn new_secret(&mut self) -> Option<[u8; SYM_KEY_LEN]> {
        None
    }

    fn seal_sym(&mut self, _key: &SymKey, payload: &Bytes) -> SealedBody {
        SealedBody::Envelope(payload.clone())
    }

    fn open_sym(&self, key: &SymKey, sealed: &Sealed) -> Result<Bytes, CryptoError> {
        match (&sealed.body, sealed.sealed_by) {
            (SealedBody::Envelope(p), SealedBy::Sym(r)) if r == key.key_ref => Ok(p.clone()),
            _ => Err(CryptoError::WrongKey),
        }
    }

    fn gen_keypair(&mut self, owner: UserId) -> KeyPair {
        KeyPair {
            public: PublicKey {
                owner,
                inner: PublicInner::Model,
            },
            private: PrivateInner::Model,
        }
    }

    fn seal_asym(&mut self, _public: &PublicKey, payload: &Bytes) -> Result<SealedBody, CryptoError> {
        Ok(SealedBody::Envelope(payload.clone()))
    }

    fn open_asym(&self, pair: &KeyPair, sealed: &Sealed) -> Result<Bytes, CryptoError> {
        match (&sealed.body, sealed.sealed_by) {
            (SealedBody::Envelope(p), SealedBy::Asym(owner)) if owner == pair.owner() => {
                Ok(p.clone())
            }
            _ => Err(CryptoError::WrongKey),
        }
    }

    fn export_key(&self, key: &SymKey) -> Bytes {
        let mut buf = BytesMut::with_capacity(SYM_KEY_LEN);
        buf.put_u64_le(key.key_id());
        buf.put_u64_le(key.version());
        buf.put_bytes(0, SYM_KEY_LEN - 16);
        buf.freeze()
    }

    fn import_key(&self, key_ref: KeyRef, bytes: &[u8]) -> Result<SymKey, CryptoError> {
        if bytes.len() != SYM_KEY_LEN {
            return Err(CryptoError::MalformedKey);
        }
        let id = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
        let version = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if (KeyRef { key_id: id, version }) != key_ref {
            return Err(CryptoError::MalformedKey);
        }
        Ok(SymKey {
            key_ref,
            secret: None,
        })
    }
}
