use std::path::Path;

use thiserror::Error;

/// Throughputs and fixed costs of the crypto primitives.
///
/// Throughput is in bytes per second (1 MB = 10^6 bytes); every other field
/// is in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CryptoCostParams {
    pub sym_throughput: f64,
    pub sym_key_setup: f64,
    pub asym_encrypt: f64,
    pub asym_decrypt: f64,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{0}` must be strictly positive and finite")]
    NotPositive(&'static str),
    #[error("reading profile: {0}")]
    Io(#[from] std::io::Error),
}

impl CryptoCostParams {
    /// AES/CBC-256 and RSA-2048 on the reference platform.
    pub fn cbc() -> Self {
        CryptoCostParams {
            sym_throughput: 447e6,
            sym_key_setup: 0.216e-6,
            asym_encrypt: 0.16e-3,
            asym_decrypt: 6.08e-3,
        }
    }

    /// AES/CTR-256 and RSA-2048 on the reference platform.
    pub fn ctr() -> Self {
        CryptoCostParams {
            sym_throughput: 2496e6,
            sym_key_setup: 0.278e-6,
            ..Self::cbc()
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let fields = [
            ("sym_throughput", self.sym_throughput),
            ("sym_key_setup", self.sym_key_setup),
            ("asym_encrypt", self.asym_encrypt),
            ("asym_decrypt", self.asym_decrypt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(ProfileError::NotPositive(name));
            }
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the CBC defaults.
    ///
    /// Recognised keys: `base` (`cbc` or `ctr`), `sym_throughput_mb_s`,
    /// `sym_key_setup_us`, `asym_encrypt_ms`, `asym_decrypt_ms`. Blank lines
    /// and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let mut params = Self::cbc();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let syntax = |message: String| ProfileError::Syntax { line, message };
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key=value, found `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "base" {
                params = match value {
                    "cbc" => Self::cbc(),
                    "ctr" => Self::ctr(),
                    other => return Err(syntax(format!("unknown base profile `{other}`"))),
                };
                continue;
            }
            let v: f64 = value
                .parse()
                .map_err(|_| syntax(format!("`{value}` is not a number")))?;
            match key {
                "sym_throughput_mb_s" => params.sym_throughput = v * 1e6,
                "sym_key_setup_us" => params.sym_key_setup = v * 1e-6,
                "asym_encrypt_ms" => params.asym_encrypt = v * 1e-3,
                "asym_decrypt_ms" => params.asym_decrypt = v * 1e-3,
                other => return Err(syntax(format!("unknown key `{other}`"))),
            }
        }
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl Default for CryptoCostParams {
    fn default() -> Self {
        Self::cbc()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_overrides() {
        let p = CryptoCostParams::parse("# custom\nsym_throughput_mb_s=1000\nasym_encrypt_ms = 0.5\n")
            .unwrap();
        assert_eq!(p.sym_throughput, 1e9);
        assert_eq!(p.asym_encrypt, 0.5e-3);
        assert_eq!(p.asym_decrypt, 6.08e-3);
        let p = CryptoCostParams::parse("base=ctr").unwrap();
        assert_eq!(p, CryptoCostParams::ctr());
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            CryptoCostParams::parse("sym_throughput_mb_s=0"),
            Err(ProfileError::NotPositive("sym_throughput"))
        ));
        assert!(matches!(
            CryptoCostParams::parse("a\n"),
            Err(ProfileError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            CryptoCostParams::parse("colour=blue"),
            Err(ProfileError::Syntax { .. })
        ));
    }
}
