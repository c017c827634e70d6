use std::fmt;
use std::str::FromStr;

use super::PaymentError;

const PREFIX: &str = "lnstub1";

/// Stand-in invoice: `lnstub1<amount_msats>m<16-hex payment hash>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bolt11Stub {
    pub amount_msats: u64,
    pub payment_hash: [u8; 8],
}

impl fmt::Display for Bolt11Stub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{PREFIX}{}m{}", self.amount_msats, hex::encode(self.payment_hash))
    }
}

impl FromStr for Bolt11Stub {
    type Err = PaymentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PaymentError::Invoice(s.chars().take(80).collect());
        let body = s.strip_prefix(PREFIX).ok_or_else(bad)?;
        let (amount, hash) = body.split_once('m').ok_or_else(bad)?;
        if amount.is_empty() || !amount.bytes().all(|b| b.is_ascii_digit()) || !crate::nostr::is_lower_hex(hash, 16) {
            return Err(bad());
        }
        let amount_msats = amount.parse().map_err(|_| bad())?;
        let mut payment_hash = [0u8; 8];
        hex::decode_to_slice(hash, &mut payment_hash).map_err(|_| bad())?;
        Ok(Self {
            amount_msats,
            payment_hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let b = Bolt11Stub {
            amount_msats: 1000,
            payment_hash: [0x01, 0x23, 0x45, 0x67, 0x89, 0xab, 0xcd, 0xef],
        };
        assert_eq!(b.to_string(), "lnstub11000m0123456789abcdef");
        assert_eq!("lnstub11000m0123456789abcdef".parse::<Bolt11Stub>().unwrap(), b);
    }

    #[test]
    fn malformed_invoices() {
        for s in ["", "lnbc1000m0123456789abcdef", "lnstub1m0123456789abcdef", "lnstub11000m0123", "lnstub1-5m0123456789abcdef", "lnstub11000m0123456789ABCDEF"] {
            assert!(s.parse::<Bolt11Stub>().is_err(), "{s}");
        }
    }
}
