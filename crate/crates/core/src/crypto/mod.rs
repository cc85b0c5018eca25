//! Pluggable cryptography and the cost model.
//!
//! [`Crypto`] is the front every model talks to. It owns key-id allocation
//! and all ledger accounting, then delegates the actual cipher work to a
//! [`CryptoProvider`]: either [`ModelProvider`] ("perfect crypto", no cipher
//! work at all) or [`RealProvider`] (AES-256-GCM and RSA-2048-OAEP). Because
//! accounting lives here and not in the providers, both produce identical
//! ledgers for identical operation sequences.

mod ledger;
mod model;
mod profile;
mod real;

use std::fmt;

use bytes::Bytes;
use thiserror::Error;

use crate::group::UserId;

pub use ledger::{Ledgers, OpLedger};
pub use model::ModelProvider;
pub use profile::{CryptoCostParams, ProfileError};
pub use real::RealProvider;

/// Length of every symmetric key (AES-256).
pub const SYM_KEY_LEN: usize = 32;
/// Canonical size of an asymmetric ciphertext: the RSA-2048 modulus length.
pub const ASYM_CIPHERTEXT_LEN: u64 = 256;
/// Largest payload accepted by [`Crypto::seal_asym`].
pub const ASYM_MAX_PAYLOAD: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("wrong key")]
    WrongKey,
    #[error("payload too large")]
    PayloadTooLarge,
    #[error("malformed key material")]
    MalformedKey,
}

/// Identity of one version of a symmetric key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyRef {
    pub key_id: u64,
    pub version: u64,
}

impl fmt::Display for KeyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}v{}", self.key_id, self.version)
    }
}

/// A 256-bit symmetric key. The model provider carries no secret material.
#[derive(Clone, PartialEq, Eq)]
pub struct SymKey {
    key_ref: KeyRef,
    secret: Option<[u8; SYM_KEY_LEN]>,
}

impl SymKey {
    pub fn key_ref(&self) -> KeyRef {
        self.key_ref
    }

    pub fn key_id(&self) -> u64 {
        self.key_ref.key_id
    }

    pub fn version(&self) -> u64 {
        self.key_ref.version
    }

    pub(crate) fn secret(&self) -> Option<&[u8; SYM_KEY_LEN]> {
        self.secret.as_ref()
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymKey")
            .field("key_ref", &self.key_ref)
            .field("secret", &self.secret.map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Clone)]
pub(crate) enum PublicInner {
    Model,
    Rsa(rsa::RsaPublicKey),
}

#[derive(Clone)]
pub(crate) enum PrivateInner {
    Model,
    Rsa(Box<rsa::RsaPrivateKey>),
}

/// The public half of a user's 2048-bit key pair.
#[derive(Clone)]
pub struct PublicKey {
    owner: UserId,
    inner: PublicInner,
}

impl PublicKey {
    pub fn owner(&self) -> UserId {
        self.owner
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.owner)
    }
}

/// A user's key pair. The private half is never placed in a message.
#[derive(Clone)]
pub struct KeyPair {
    public: PublicKey,
    private: PrivateInner,
}

impl KeyPair {
    pub fn owner(&self) -> UserId {
        self.public.owner
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", self.owner())
    }
}

/// What a [`Sealed`] value was sealed under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SealedBy {
    Sym(KeyRef),
    Asym(UserId),
}

#[derive(Clone, Debug)]
pub enum SealedBody {
    /// Model provider: the plaintext travels in a tagged envelope.
    Envelope(Bytes),
    /// Real provider: actual ciphertext.
    Cipher(Bytes),
}

/// A sealed payload. All traffic and time accounting uses `canonical_size`,
/// never the real ciphertext length.
#[derive(Clone, Debug)]
pub struct Sealed {
    body: SealedBody,
    sealed_by: SealedBy,
    canonical_size: u64,
}

impl Sealed {
    pub fn sealed_by(&self) -> SealedBy {
        self.sealed_by
    }

    pub fn canonical_size(&self) -> u64 {
        self.canonical_size
    }

    /// Actual bytes carried (ciphertext for the real provider).
    pub fn body_len(&self) -> usize {
        match &self.body {
            SealedBody::Envelope(b) | SealedBody::Cipher(b) => b.len(),
        }
    }
}

/// Cipher backend. Implementations do no accounting and allocate no ids.
pub trait CryptoProvider: Send {
    fn name(&self) -> &'static str;
    /// Fresh secret for a new key or key version; `None` for perfect crypto.
    fn new_secret(&mut self) -> Option<[u8; SYM_KEY_LEN]>;
    fn seal_sym(&mut self, key: &SymKey, payload: &Bytes) -> SealedBody;
    fn open_sym(&self, key: &SymKey, sealed: &Sealed) -> Result<Bytes, CryptoError>;
    fn gen_keypair(&mut self, owner: UserId) -> KeyPair;
    fn seal_asym(&mut self, public: &PublicKey, payload: &Bytes)
        -> Result<SealedBody, CryptoError>;
    fn open_asym(&self, pair: &KeyPair, sealed: &Sealed) -> Result<Bytes, CryptoError>;
    /// Wire form of a key (always [`SYM_KEY_LEN`] bytes).
    fn export_key(&self, key: &SymKey) -> Bytes;
    fn import_key(&self, key_ref: KeyRef, bytes: &[u8]) -> Result<SymKey, CryptoError>;
}

/// Accounting front over a [`CryptoProvider`].
pub struct Crypto {
    provider: Box<dyn CryptoProvider>,
    next_key_id: u64,
}

impl Crypto {
    pub fn new(provider: Box<dyn CryptoProvider>) -> Self {
        Crypto {
            provider,
            next_key_id: 1,
        }
    }

    pub fn model() -> Self {
        Self::new(Box::new(ModelProvider))
    }

    pub fn real() -> Self {
        Self::new(Box::new(RealProvider::new()))
    }

    pub fn provider_name(&self) -> &'static str {
        self.provider.name()
    }

    /// Fresh key at version 1.
    pub fn gen_sym(&mut self, ledger: &mut OpLedger) -> SymKey {
        let key_id = self.next_key_id;
        self.next_key_id += 1;
        ledger.keygen_count += 1;
        SymKey {
            key_ref: KeyRef { key_id, version: 1 },
            secret: self.provider.new_secret(),
        }
    }

    /// Next version of `key`, with fresh material.
    pub fn refresh_sym(&mut self, key: &SymKey, ledger: &mut OpLedger) -> SymKey {
        ledger.keygen_count += 1;
        SymKey {
            key_ref: KeyRef {
                key_id: key.key_id(),
                version: key.version() + 1,
            },
            secret: self.provider.new_secret(),
        }
    }

    pub fn seal_sym(&mut self, key: &SymKey, payload: Bytes, ledger: &mut OpLedger) -> Sealed {
        let size = payload.len() as u64;
        ledger.sym_enc_count += 1;
        ledger.sym_bytes_processed += size;
        Sealed {
            body: self.provider.seal_sym(key, &payload),
            sealed_by: SealedBy::Sym(key.key_ref),
            canonical_size: size,
        }
    }

    /// Opens `sealed` with `key`. The attempt is charged whether or not it
    /// succeeds.
    pub fn open_sym(
        &self,
        key: &SymKey,
        sealed: &Sealed,
        ledger: &mut OpLedger,
    ) -> Result<Bytes, CryptoError> {
        ledger.sym_dec_count += 1;
        ledger.sym_bytes_processed += sealed.canonical_size;
        self.provider.open_sym(key, sealed)
    }

    pub fn gen_keypair(&mut self, owner: UserId) -> KeyPair {
        self.provider.gen_keypair(owner)
    }

    pub fn seal_asym(
        &mut self,
        public: &PublicKey,
        payload: Bytes,
        ledger: &mut OpLedger,
    ) -> Result<Sealed, CryptoError> {
        if payload.len() > ASYM_MAX_PAYLOAD {
            return Err(CryptoError::PayloadTooLarge);
        }
        let body = self.provider.seal_asym(public, &payload)?;
        ledger.asym_enc_count += 1;
        Ok(Sealed {
            body,
            sealed_by: SealedBy::Asym(public.owner),
            canonical_size: ASYM_CIPHERTEXT_LEN,
        })
    }

    pub fn open_asym(
        &self,
        pair: &KeyPair,
        sealed: &Sealed,
        ledger: &mut OpLedger,
    ) -> Result<Bytes, CryptoError> {
        ledger.asym_dec_count += 1;
        self.provider.open_asym(pair, sealed)
    }

    pub fn export_key(&self, key: &SymKey) -> Bytes {
        self.provider.export_key(key)
    }

    pub fn import_key(&self, key_ref: KeyRef, bytes: &[u8]) -> Result<SymKey, CryptoError> {
        self.provider.import_key(key_ref, bytes)
    }

    /// Seals the wire form of `inner` under `outer`.
    pub fn wrap_key(&mut self, outer: &SymKey, inner: &SymKey, ledger: &mut OpLedger) -> Sealed {
        let wire = self.export_key(inner);
        self.seal_sym(outer, wire, ledger)
    }

    /// Inverse of [`Crypto::wrap_key`]; `target` names the wrapped key.
    pub fn unwrap_key(
        &self,
        outer: &SymKey,
        target: KeyRef,
        sealed: &Sealed,
        ledger: &mut OpLedger,
    ) -> Result<SymKey, CryptoError> {
        let wire = self.open_sym(outer, sealed, ledger)?;
        self.import_key(target, &wire)
    }
}

impl fmt::Debug for Crypto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Crypto")
            .field("provider", &self.provider.name())
            .field("next_key_id", &self.next_key_id)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn providers() -> Vec<Crypto> {
        vec![Crypto::model(), Crypto::real()]
    }

    #[test]
    fn gen_sym_ids_and_cost() {
        let params = CryptoCostParams::default();
        let mut ledger = OpLedger::default();
        assert_eq!(ledger.modeled_time(&params), 0.0);
        let mut c = Crypto::model();
        let a = c.gen_sym(&mut ledger);
        assert_eq!(ledger.keygen_count, 1);
        assert!((ledger.modeled_time(&params) - 0.216e-6).abs() < 1e-15);
        let b = c.gen_sym(&mut ledger);
        assert_ne!(a.key_id(), b.key_id());
        assert_eq!(a.version(), 1);
    }

    #[test]
    fn sym_roundtrip_and_wrong_key() {
        for mut c in providers() {
            let mut l = OpLedger::default();
            let k = c.gen_sym(&mut l);
            let k2 = c.refresh_sym(&k, &mut l);
            let other = c.gen_sym(&mut l);
            let msg = Bytes::from_static(b"hello group");
            let s = c.seal_sym(&k, msg.clone(), &mut l);
            assert_eq!(s.canonical_size(), msg.len() as u64);
            assert_eq!(c.open_sym(&k, &s, &mut l).unwrap(), msg);
            assert_eq!(c.open_sym(&k2, &s, &mut l), Err(CryptoError::WrongKey), "{}", c.provider_name());
            assert_eq!(c.open_sym(&other, &s, &mut l), Err(CryptoError::WrongKey));
            assert_eq!(l.sym_dec_count, 3);
        }
    }

    #[test]
    fn seal_counts_and_key_payload_size() {
        let mut c = Crypto::model();
        let mut l = OpLedger::default();
        let k = c.gen_sym(&mut l);
        let inner = c.gen_sym(&mut l);
        let s = c.wrap_key(&k, &inner, &mut l);
        assert_eq!(s.canonical_size(), 32);
        c.seal_sym(&k, Bytes::from_static(b"x"), &mut l);
        assert_eq!(l.sym_enc_count, 2);
        let back = c.unwrap_key(&k, inner.key_ref(), &s, &mut l).unwrap();
        assert_eq!(back.key_ref(), inner.key_ref());
    }

    #[test]
    fn asym_roundtrip_sizes_and_errors() {
        let params = CryptoCostParams::default();
        for mut c in providers() {
            let alice = c.gen_keypair(UserId(1));
            let bob = c.gen_keypair(UserId(2));
            let mut seal_l = OpLedger::default();
            let payload = Bytes::from(vec![7u8; 32]);
            let s = c.seal_asym(alice.public(), payload.clone(), &mut seal_l).unwrap();
            assert_eq!(s.canonical_size(), 256);
            assert!((seal_l.modeled_time(&params) - 0.16e-3).abs() < 1e-12);

            let mut open_l = OpLedger::default();
            assert_eq!(c.open_asym(&alice, &s, &mut open_l).unwrap(), payload);
            assert!((open_l.modeled_time(&params) - 6.08e-3).abs() < 1e-12);
            assert_eq!(c.open_asym(&bob, &s, &mut open_l), Err(CryptoError::WrongKey));

            let big = Bytes::from(vec![0u8; 257]);
            assert_eq!(
                c.seal_asym(alice.public(), big, &mut seal_l).unwrap_err(),
                CryptoError::PayloadTooLarge
            );
        }
    }

    #[test]
    fn real_ciphertext_is_not_plaintext() {
        let mut c = Crypto::real();
        let mut l = OpLedger::default();
        let k = c.gen_sym(&mut l);
        let s = c.seal_sym(&k, Bytes::from(vec![0u8; 64]), &mut l);
        match &s.body {
            SealedBody::Cipher(ct) => assert_ne!(&ct[..], &[0u8; 64][..]),
            SealedBody::Envelope(_) => panic!("real provider produced an envelope"),
        }
        assert_eq!(s.canonical_size(), 64);
    }
}
