//! Plain-text detector checkpoints.
//!
//! ```text
//! oamil-checkpoint 1
//! shared true
//! meta mode +oa-ie
//! tensor selector 3 16
//! <48 values, row-major, space separated>
//! tensor classifier 3 16
//! <48 values>
//! tensor generator 3 4 16
//! <192 values>
//! ```
//!
//! `meta` lines are free-form key/value pairs. Values use Rust's shortest
//! round-trip float formatting, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ToyDetector, Weights};
use crate::data::FEATURE_DIM;
use crate::error::{Error, Result};

const MAGIC: &str = "oamil-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub detector: ToyDetector,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(detector: ToyDetector) -> Self {
        Checkpoint {
            detector,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let w = &self.detector.weights;
        let c = w.num_classes();
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "shared {}", self.detector.shared);
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        let mut tensor = |name: &str, shape: &[usize], values: Vec<f64>| {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            let vals: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "tensor {name} {}", dims.join(" "));
            let _ = writeln!(s, "{}", vals.join(" "));
        };
        tensor("selector", &[c, FEATURE_DIM], w.selector.iter().flatten().copied().collect());
        tensor("classifier", &[c, FEATURE_DIM], w.classifier.iter().flatten().copied().collect());
        tensor(
            "generator",
            &[c, 4, FEATURE_DIM],
            w.generator.iter().flatten().flatten().copied().collect(),
        );
        s
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

pub fn parse_checkpoint(text: &str, origin: &str) -> Result<Checkpoint> {
    let err = |line: usize, msg: String| Error::format(format!("{origin}:{line}"), msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(err(1, format!("missing `{MAGIC}` header"))),
    }
    let mut shared = None;
    let mut meta = BTreeMap::new();
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    while let Some((n, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "shared" => {
                shared = Some(
                    rest.parse::<bool>()
                        .map_err(|_| err(n, format!("bad shared flag `{rest}`")))?,
                )
            }
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            }
            "tensor" => {
                let mut parts = rest.split_whitespace();
                let name = parts
                    .next()
                    .ok_or_else(|| err(n, "tensor without a name".into()))?
                    .to_string();
                let shape = parts
                    .map(|d| d.parse::<usize>().map_err(|_| err(n, format!("bad dimension `{d}`"))))
                    .collect::<Result<Vec<_>>>()?;
                let (vn, vline) = lines
                    .next()
                    .ok_or_else(|| err(n, format!("tensor {name} has no values")))?;
                let values = vline
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| err(vn, format!("bad value `{v}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if values.len() != shape.iter().product::<usize>() {
                    return Err(err(vn, format!("tensor {name}: value count does not match shape {shape:?}")));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(err(vn, format!("tensor {name}: non-finite weight")));
                }
                tensors.insert(name, (shape, values));
            }
            other => return Err(err(n, format!("unknown record `{other}`"))),
        }
    }
    let shared = shared.ok_or_else(|| err(0, "missing shared flag".into()))?;
    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| err(0, format!("missing tensor {name}")))
    };
    let (sel_shape, sel) = take("selector")?;
    let (cls_shape, cls) = take("classifier")?;
    let (gen_shape, gen) = take("generator")?;
    let c = cls_shape.first().copied().unwrap_or(0);
    if sel_shape != [c, FEATURE_DIM] || cls_shape != [c, FEATURE_DIM] || gen_shape != [c, 4, FEATURE_DIM] {
        return Err(err(0, format!("tensor shapes do not describe a {c}-class detector with {FEATURE_DIM} features")));
    }
    let mut flat = sel;
    flat.extend(cls);
    flat.extend(gen);
    Ok(Checkpoint {
        detector: ToyDetector {
            weights: Weights::from_slice(c, &flat),
            shared,
        },
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn save_load_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let det = ToyDetector::random(3, true, 2.0, &mut rng);
        let mut ck = Checkpoint::new(det);
        ck.meta.insert("mode".into(), "+oa-ie".into());
        ck.meta.insert("noise_r".into(), "0.4".into());
        let text = ck.to_text();
        let back = parse_checkpoint(&text, "mem").unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_checkpoints_rejected() {
        assert!(parse_checkpoint("nope", "mem").is_err());
        let det = ToyDetector::new(1, false);
        let text = Checkpoint::new(det).to_text();
        let truncated = text.replace("tensor generator 1 4 16", "tensor generator 1 4 17");
        let e = parse_checkpoint(&truncated, "mem").unwrap_err().to_string();
        assert!(e.contains("value count"), "{e}");
        let nan = text.replacen("0e0", "NaN", 1);
        assert!(parse_checkpoint(&nan, "mem").is_err());
    }
}
