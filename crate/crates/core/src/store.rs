//! Envelope encryption at rest: a fresh AES-256-GCM data key per record,
//! wrapped to the recipient with RSA-OAEP-SHA256.
//!
//! Sealed record layout (`.ocsl`), integers little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `OCSL`                           |
//! | 4      | 2    | format version, currently 1            |
//! | 6      | 1    | key-wrap algorithm, 1 = RSA-OAEP-SHA256 |
//! | 7      | 1    | cipher, 1 = AES-256-GCM                |
//! | 8      | 4+n  | metadata JSON (`type`, `timestamp`)    |
//! | ...    | 4+n  | wrapped data key                       |
//! | ...    | 4+n  | nonce (12 bytes)                       |
//! | ...    | 4+n  | ciphertext with 16-byte tag            |
//!
//! Each variable field is a `u32` length followed by the bytes. The first 8
//! bytes and the metadata are bound to the ciphertext as associated data.

use std::fs;
use std::path::{Path, PathBuf};

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::{CryptoRng, RngCore};
use rsa::pkcs8::{
    DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding,
};
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use zeroize::Zeroizing;

use crate::error::{Error, Result};

pub const RECORD_MAGIC: &[u8; 4] = b"OCSL";
pub const RECORD_VERSION: u16 = 1;
pub const WRAP_RSA_OAEP_SHA256: u8 = 1;
pub const CIPHER_AES_256_GCM: u8 = 1;
pub const RECORD_EXTENSION: &str = "ocsl";
pub const DEFAULT_KEY_BITS: usize = 2048;

const NONCE_LEN: usize = 12;
const KEY_LEN: usize = 32;
const HEADER_LEN: usize = 8;

/// Plaintext description of a sealed payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(rename = "type")]
    pub type_tag: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedRecord {
    pub meta: RecordMeta,
    pub wrapped_key: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

fn header() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(RECORD_MAGIC);
    h[4..6].copy_from_slice(&RECORD_VERSION.to_le_bytes());
    h[6] = WRAP_RSA_OAEP_SHA256;
    h[7] = CIPHER_AES_256_GCM;
    h
}

fn associated_data(meta_json: &[u8]) -> Vec<u8> {
    let mut aad = header().to_vec();
    aad.extend_from_slice(meta_json);
    aad
}

/// Encrypts `payload` under a fresh data key and wraps the key to `recipient`.
pub fn seal<R: RngCore + CryptoRng>(
    payload: &[u8],
    meta: RecordMeta,
    recipient: &RsaPublicKey,
    rng: &mut R,
) -> Result<SealedRecord> {
    let mut key = Zeroizing::new([0u8; KEY_LEN]);
    rng.fill_bytes(key.as_mut());
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let meta_json = serde_json::to_vec(&meta)?;
    let cipher =
        Aes256Gcm::new_from_slice(key.as_ref()).map_err(|e| Error::Crypto(e.to_string()))?;
    let ciphertext = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: payload,
                aad: &associated_data(&meta_json),
            },
        )
        .map_err(|e| Error::Crypto(e.to_string()))?;
    let wrapped_key = recipient
        .encrypt(rng, Oaep::new::<Sha256>(), key.as_ref())
        .map_err(|e| Error::Crypto(e.to_string()))?;
    Ok(SealedRecord {
        meta,
        wrapped_key,
        nonce,
        ciphertext,
    })
}

/// Recovers the exact payload, or fails with [`Error::Authentication`].
pub fn unseal(record: &SealedRecord, key: &RsaPrivateKey) -> Result<Vec<u8>> {
    let data_key = Zeroizing::new(
        key.decrypt(Oaep::new::<Sha256>(), &record.wrapped_key)
            .map_err(|_| Error::Authentication)?,
    );
    if data_key.len() != KEY_LEN {
        return Err(Error::Authentication);
    }
    let meta_json = serde_json::to_vec(&record.meta)?;
    let cipher = Aes256Gcm::new_from_slice(&data_key).map_err(|_| Error::Authentication)?;
    cipher
        .decrypt(
            Nonce::from_slice(&record.nonce),
            Payload {
                msg: &record.ciphertext,
                aad: &associated_data(&meta_json),
            },
        )
        .map_err(|_| Error::Authentication)
}

fn put_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn take_field<'a>(buf: &mut &'a [u8], what: &str) -> Result<&'a [u8]> {
    if buf.len() < 4 {
        return Err(Error::Malformed(format!("truncated before {what} length")));
    }
    let n = u32::from_le_bytes(buf[..4].try_into().expect("four bytes")) as usize;
    if buf.len() - 4 < n {
        return Err(Error::Malformed(format!("truncated {what}")));
    }
    let field = &buf[4..4 + n];
    *buf = &buf[4 + n..];
    Ok(field)
}

impl SealedRecord {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta_json = serde_json::to_vec(&self.meta)?;
        let mut out = header().to_vec();
        put_field(&mut out, &meta_json);
        put_field(&mut out, &self.wrapped_key);
        put_field(&mut out, &self.nonce);
        put_field(&mut out, &self.ciphertext);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != RECORD_MAGIC {
            return Err(Error::Malformed("not a sealed record".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != RECORD_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported record version {version}"
            )));
        }
        if bytes[6] != WRAP_RSA_OAEP_SHA256 || bytes[7] != CIPHER_AES_256_GCM {
            return Err(Error::Malformed(format!(
                "unknown algorithms {}/{}",
                bytes[6], bytes[7]
            )));
        }
        let mut rest = &bytes[HEADER_LEN..];
        let meta_json = take_field(&mut rest, "metadata")?;
        let wrapped_key = take_field(&mut rest, "wrapped key")?.to_vec();
        let nonce: [u8; NONCE_LEN] = take_field(&mut rest, "nonce")?
            .try_into()
            .map_err(|_| Error::Malformed("nonce must be 12 bytes".into()))?;
        let ciphertext = take_field(&mut rest, "ciphertext")?.to_vec();
        if !rest.is_empty() {
            return Err(Error::Malformed("trailing bytes after ciphertext".into()));
        }
        let meta: RecordMeta = serde_json::from_slice(meta_json)
            .map_err(|e| Error::Malformed(format!("metadata: {e}")))?;
        // Non-canonical metadata would change the associated data.
        if serde_json::to_vec(&meta)? != meta_json {
            return Err(Error::Authentication);
        }
        Ok(Self {
            meta,
            wrapped_key,
            nonce,
            ciphertext,
        })
    }
}

/// Parses and opens a serialized record.
pub fn unseal_bytes(bytes: &[u8], key: &RsaPrivateKey) -> Result<(RecordMeta, Vec<u8>)> {
    let record = SealedRecord::from_bytes(bytes)?;
    let payload = unseal(&record, key)?;
    Ok((record.meta, payload))
}

pub fn generate_keypair<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<RsaPrivateKey> {
    RsaPrivateKey::new(rng, bits).map_err(|e| Error::Crypto(e.to_string()))
}

pub fn write_private_key_pem(path: impl AsRef<Path>, key: &RsaPrivateKey) -> Result<()> {
    let pem = key
        .to_pkcs8_pem(LineEnding::LF)
        .map_err(|e| Error::Crypto(e.to_string()))?;
    fs::write(path, pem.as_bytes())?;
    Ok(())
}

pub fn write_public_key_pem(path: impl AsRef<Path>, key: &RsaPublicKey) -> Result<()> {
    let pem = key
        .to_public_key_pem(LineEnding::LF)
        .map_err(|e| Error::Crypto(e.to_string()))?;
    fs::write(path, pem)?;
    Ok(())
}

pub fn read_private_key_pem(path: impl AsRef<Path>) -> Result<RsaPrivateKey> {
    let pem = Zeroizing::new(fs::read_to_string(path)?);
    RsaPrivateKey::from_pkcs8_pem(&pem).map_err(|e| Error::Crypto(format!("private key: {e}")))
}

pub fn read_public_key_pem(path: impl AsRef<Path>) -> Result<RsaPublicKey> {
    let pem = fs::read_to_string(path)?;
    RsaPublicKey::from_public_key_pem(&pem).map_err(|e| Error::Crypto(format!("public key: {e}")))
}

/// Seals every regular file under `src` into `dst`, keeping relative paths
/// and appending the record extension. Returns the written paths.
pub fn seal_dir<R: RngCore + CryptoRng>(
    src: &Path,
    dst: &Path,
    recipient: &RsaPublicKey,
    timestamp: u64,
    rng: &mut R,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for rel in list_files(src)? {
        let payload = fs::read(src.join(&rel))?;
        let type_tag = rel
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("bin")
            .to_string();
        let record = seal(
            &payload,
            RecordMeta {
                type_tag,
                timestamp,
            },
            recipient,
            rng,
        )?;
        let mut out = dst.join(&rel).into_os_string();
        out.push(".");
        out.push(RECORD_EXTENSION);
        let out = PathBuf::from(out);
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&out, record.to_bytes()?)?;
        written.push(out);
    }
    Ok(written)
}

/// Opens every `.ocsl` file under `src` into `dst`, dropping the extension.
pub fn unseal_dir(src: &Path, dst: &Path, key: &RsaPrivateKey) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for rel in list_files(src)? {
        if rel.extension().and_then(|e| e.to_str()) != Some(RECORD_EXTENSION) {
            continue;
        }
        let (_, payload) = unseal_bytes(&fs::read(src.join(&rel))?, key)?;
        let out = dst.join(rel.with_extension(""));
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&out, payload)?;
        written.push(out);
    }
    Ok(written)
}

/// Relative paths of all regular files below `root`, sorted.
fn list_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for entry in fs::read_dir(root.join(&rel))? {
            let entry = entry?;
            let path = rel.join(entry.file_name());
            if entry.file_type()?.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;

    fn key() -> RsaPrivateKey {
        generate_keypair(1024, &mut ChaCha20Rng::seed_from_u64(1)).unwrap()
    }

    fn meta() -> RecordMeta {
        RecordMeta {
            type_tag: "wav".into(),
            timestamp: 1_700_000_000,
        }
    }

    #[test]
    fn roundtrip_and_fresh_randomness() {
        let sk = key();
        let pk = sk.to_public_key();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let payload = b"non-speech second".to_vec();
        let a = seal(&payload, meta(), &pk, &mut rng).unwrap();
        let b = seal(&payload, meta(), &pk, &mut rng).unwrap();
        assert_ne!(a.ciphertext, b.ciphertext);
        assert_ne!(a.nonce, b.nonce);
        let bytes = a.to_bytes().unwrap();
        let (m, out) = unseal_bytes(&bytes, &sk).unwrap();
        assert_eq!(out, payload);
        assert_eq!(m, meta());
        assert_eq!(
            unseal(&seal(&[], meta(), &pk, &mut rng).unwrap(), &sk).unwrap(),
            Vec::<u8>::new()
        );
    }

    #[test]
    fn every_flip_is_detected() {
        let sk = key();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let bytes = seal(b"payload bytes", meta(), &sk.to_public_key(), &mut rng)
            .unwrap()
            .to_bytes()
            .unwrap();
        for i in 0..bytes.len() {
            let mut t = bytes.clone();
            t[i] ^= 0x01;
            assert!(
                unseal_bytes(&t, &sk).is_err(),
                "flip at byte {i} went unnoticed"
            );
        }
    }

    #[test]
    fn data_key_never_appears_in_the_record() {
        let sk = key();
        let rng = ChaCha20Rng::seed_from_u64(6);
        let mut probe = rng.clone();
        let mut data_key = [0u8; KEY_LEN];
        probe.fill_bytes(&mut data_key);
        let bytes = seal(&[0u8; 4096], meta(), &sk.to_public_key(), &mut rng.clone())
            .unwrap()
            .to_bytes()
            .unwrap();
        assert!(!bytes
            .windows(8)
            .any(|w| data_key.windows(8).any(|k| k == w)));
    }

    #[test]
    fn wrong_key_fails_authentication() {
        let sk = key();
        let other = generate_keypair(1024, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let rec = seal(b"x", meta(), &sk.to_public_key(), &mut rng).unwrap();
        assert!(matches!(unseal(&rec, &other), Err(Error::Authentication)));
    }

    #[test]
    fn malformed_envelopes_are_rejected() {
        assert!(matches!(
            SealedRecord::from_bytes(b"OCS"),
            Err(Error::Malformed(_))
        ));
        let mut h = header().to_vec();
        h.extend_from_slice(&100u32.to_le_bytes());
        assert!(matches!(
            SealedRecord::from_bytes(&h),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn pem_and_directory_roundtrip() {
        let sk = key();
        let dir = tempfile::tempdir().unwrap();
        let (skp, pkp) = (dir.path().join("k.pem"), dir.path().join("k.pub.pem"));
        write_private_key_pem(&skp, &sk).unwrap();
        write_public_key_pem(&pkp, &sk.to_public_key()).unwrap();
        let sk2 = read_private_key_pem(&skp).unwrap();
        let pk2 = read_public_key_pem(&pkp).unwrap();
        let src = dir.path().join("src");
        fs::create_dir_all(src.join("sub")).unwrap();
        fs::write(src.join("a.csv"), b"1,2\n").unwrap();
        fs::write(src.join("sub/b.wav"), [0u8, 1, 2, 3]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let sealed = seal_dir(&src, &dir.path().join("sealed"), &pk2, 7, &mut rng).unwrap();
        assert_eq!(sealed.len(), 2);
        unseal_dir(&dir.path().join("sealed"), &dir.path().join("open"), &sk2).unwrap();
        assert_eq!(fs::read(dir.path().join("open/a.csv")).unwrap(), b"1,2\n");
        assert_eq!(
            fs::read(dir.path().join("open/sub/b.wav")).unwrap(),
            vec![0u8, 1, 2, 3]
        );
    }
}
