use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Adam, AdamConfig, FmParams};
use crate::error::{Error, Result};

const HEADER_END: &[u8] = b"end\n";

/// FM parameters, optional optimizer moments and free-form metadata.
///
/// File layout: `key=value` header lines, a literal `end` line, then the
/// parameters followed by the first and second moments (if any) as
/// little-endian `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FmParams,
    pub optimizer: Option<Adam>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: FmParams) -> Self {
        Self {
            params,
            optimizer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut header = BTreeMap::new();
        header.insert("users".to_string(), p.num_users().to_string());
        header.insert("items".to_string(), p.num_items().to_string());
        header.insert("dim".to_string(), p.dim().to_string());
        header.insert("params".to_string(), p.len().to_string());
        if let Some(opt) = &self.optimizer {
            let c = opt.config;
            header.insert("step".into(), opt.step_count().to_string());
            header.insert("lr".into(), format!("{:?}", c.learning_rate));
            header.insert("beta1".into(), format!("{:?}", c.beta1));
            header.insert("beta2".into(), format!("{:?}", c.beta2));
            header.insert("eps".into(), format!("{:?}", c.eps));
        }
        for (k, v) in &self.meta {
            header.insert(format!("meta.{k}"), v.clone());
        }
        let mut out = Vec::new();
        for (k, v) in &header {
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out.extend_from_slice(HEADER_END);
        let mut put = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        put(p.as_slice());
        if let Some(opt) = &self.optimizer {
            let (m, v) = opt.moments();
            put(m);
            put(v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Validation(format!("checkpoint: {msg}"));
        let split = bytes
            .windows(HEADER_END.len() + 1)
            .position(|w| w[0] == b'\n' && &w[1..] == HEADER_END)
            .map(|k| k + 1)
            .or_else(|| bytes.starts_with(HEADER_END).then_some(0))
            .ok_or_else(|| bad("missing header terminator"))?;
        let text = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let kv = crate::experiment::config::parse_key_values(text)?;
        let num = |k: &str| -> Result<usize> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("missing '{k}'")))
        };
        let float = |k: &str| -> Result<f64> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(&format!("missing '{k}'")))
        };
        let (users, items, dim, len) = (num("users")?, num("items")?, num("dim")?, num("params")?);
        let body = &bytes[split + HEADER_END.len()..];
        if body.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64"));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let has_opt = kv.contains_key("step");
        let expected = if has_opt { 3 * len } else { len };
        if values.len() != expected {
            return Err(bad(&format!("expected {expected} values, found {}", values.len())));
        }
        let params = FmParams::from_raw(users, items, dim, values[..len].to_vec())?;
        let optimizer = if has_opt {
            let config = AdamConfig {
                learning_rate: float("lr")?,
                beta1: float("beta1")?,
                beta2: float("beta2")?,
                eps: float("eps")?,
            };
            Some(Adam::from_state(
                config,
                values[len..2 * len].to_vec(),
                values[2 * len..].to_vec(),
                num("step")? as u64,
            )?)
        } else {
            None
        };
        let meta = kv
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self { params, optimizer, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_and_without_moments() {
        let params = FmParams::init(3, 4, 2, 9, 0).unwrap();
        let mut ck = Checkpoint::new(params.clone());
        ck.meta.insert("seed".into(), "9".into());
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);

        let mut opt = Adam::new(AdamConfig::default(), params.len());
        let mut p = params.clone();
        let g = vec![0.25; params.len()];
        opt.update(p.as_mut_slice(), &g).unwrap();
        ck.params = p;
        ck.optimizer = Some(opt);
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let ck = Checkpoint::new(FmParams::zeros(1, 1, 1).unwrap());
        let mut bytes = ck.to_bytes();
        bytes.truncate(bytes.len() - 8);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
