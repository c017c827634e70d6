use std::fmt;

use k256::schnorr::SigningKey;
use rand::rngs::OsRng;

use super::NostrError;

/// A NOSTR identity: secp256k1 secret scalar plus its x-only public key.
///
/// The secret never leaves this type except through [`Keypair::secret_key_bytes`],
/// which exists for key-file persistence.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
    public_key: String,
}

impl Keypair {
    fn from_signing(signing: SigningKey) -> Self {
        let public_key = hex::encode(signing.verifying_key().to_bytes());
        Self { signing, public_key }
    }

    /// Builds a keypair from a 32-byte big-endian secret scalar.
    pub fn from_secret_bytes(secret: &[u8; 32]) -> Result<Self, NostrError> {
        SigningKey::from_bytes(secret)
            .map(Self::from_signing)
            .map_err(|_| NostrError::InvalidSecretKey)
    }

    pub fn from_secret_hex(secret: &str) -> Result<Self, NostrError> {
        let bytes = hex::decode(secret.trim()).map_err(|e| NostrError::Hex(e.to_string()))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| NostrError::InvalidSecretKey)?;
        Self::from_secret_bytes(&arr)
    }

    /// Lowercase hex x-only public key, as carried in events.
    pub fn public_key(&self) -> &str {
        &self.public_key
    }

    pub fn secret_key_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }

    pub fn secret_key_hex(&self) -> String {
        hex::encode(self.secret_key_bytes())
    }

    /// Reads a hex secret from `path`, or creates one there if the file
    /// does not exist.
    pub fn load_or_create(path: &std::path::Path) -> Result<Self, NostrError> {
        match std::fs::read_to_string(path) {
            Ok(s) => Self::from_secret_hex(&s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let k = generate_keypair(None)?;
                let mut opts = std::fs::OpenOptions::new();
                opts.write(true).create_new(true);
                #[cfg(unix)]
                std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
                let mut f = opts.open(path).map_err(|e| NostrError::KeyFile(e.to_string()))?;
                std::io::Write::write_all(&mut f, format!("{}\n", k.secret_key_hex()).as_bytes())
                    .map_err(|e| NostrError::KeyFile(e.to_string()))?;
                Ok(k)
            }
            Err(e) => Err(NostrError::KeyFile(e.to_string())),
        }
    }

    pub(crate) fn signing_key(&self) -> &SigningKey {
        &self.signing
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair")
            .field("public_key", &self.public_key)
            .finish_non_exhaustive()
    }
}

impl PartialEq for Keypair {
    fn eq(&self, other: &Self) -> bool {
        self.public_key == other.public_key && self.secret_key_bytes() == other.secret_key_bytes()
    }
}

impl Eq for Keypair {}

/// Generates a keypair locally. Deterministic when `seed` is given; the seed
/// must be a valid nonzero scalar below the curve order.
pub fn generate_keypair(seed: Option<[u8; 32]>) -> Result<Keypair, NostrError> {
    match seed {
        Some(seed) => Keypair::from_secret_bytes(&seed),
        None => Ok(Keypair::from_signing(SigningKey::random(&mut OsRng))),
    }
}
