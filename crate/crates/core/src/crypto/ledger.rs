use std::collections::BTreeMap;
use std::ops::Sub;

use super::CryptoCostParams;
use crate::group::UserId;

/// Per-principal crypto accounting. Counters only ever grow; modeled time
/// is always recomputed from them so that equal counters give bit-identical
/// times.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpLedger {
    pub sym_enc_count: u64,
    pub sym_dec_count: u64,
    pub asym_enc_count: u64,
    pub asym_dec_count: u64,
    pub keygen_count: u64,
    pub sym_bytes_processed: u64,
}

impl OpLedger {
    /// Seconds of modeled crypto work. Every symmetric key generation and
    /// every symmetric cipher invocation pays one key setup.
    pub fn modeled_time(&self, params: &CryptoCostParams) -> f64 {
        let setups = (self.keygen_count + self.sym_enc_count + self.sym_dec_count) as f64;
        self.sym_bytes_processed as f64 / params.sym_throughput
            + setups * params.sym_key_setup
            + self.asym_enc_count as f64 * params.asym_encrypt
            + self.asym_dec_count as f64 * params.asym_decrypt
    }

    pub fn total_crypto_ops(&self) -> u64 {
        self.sym_enc_count
            + self.sym_dec_count
            + self.asym_enc_count
            + self.asym_dec_count
            + self.keygen_count
    }
}

impl Sub for OpLedger {
    type Output = OpLedger;

    /// Counter delta; `rhs` must be an earlier snapshot of the same ledger.
    fn sub(self, rhs: OpLedger) -> OpLedger {
        OpLedger {
            sym_enc_count: self.sym_enc_count - rhs.sym_enc_count,
            sym_dec_count: self.sym_dec_count - rhs.sym_dec_count,
            asym_enc_count: self.asym_enc_count - rhs.asym_enc_count,
            asym_dec_count: self.asym_dec_count - rhs.asym_dec_count,
            keygen_count: self.keygen_count - rhs.keygen_count,
            sym_bytes_processed: self.sym_bytes_processed - rhs.sym_bytes_processed,
        }
    }
}

/// Ledgers of every principal in one run.
#[derive(Clone, Debug, Default)]
pub struct Ledgers {
    by_user: BTreeMap<UserId, OpLedger>,
}

impl Ledgers {
    pub fn entry(&mut self, user: UserId) -> &mut OpLedger {
        self.by_user.entry(user).or_default()
    }

    pub fn get(&self, user: UserId) -> OpLedger {
        self.by_user.get(&user).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, &OpLedger)> {
        self.by_user.iter().map(|(u, l)| (*u, l))
    }

    pub fn clear(&mut self) {
        self.by_user.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_seal_time_matches_direct_division() {
        let params = CryptoCostParams::default();
        let l = OpLedger {
            sym_bytes_processed: 102_400,
            ..Default::default()
        };
        // 102400 / 447e6
        assert!((l.modeled_time(&params) - 2.290827740492170e-4).abs() < 1e-15);
    }

    #[test]
    fn delta_of_snapshots() {
        let a = OpLedger {
            sym_enc_count: 3,
            keygen_count: 1,
            sym_bytes_processed: 10,
            ..Default::default()
        };
        let mut b = a;
        b.sym_enc_count += 2;
        b.asym_dec_count += 1;
        let d = b - a;
        assert_eq!(d.sym_enc_count, 2);
        assert_eq!(d.asym_dec_count, 1);
        assert_eq!(d.keygen_count, 0);
    }
}
