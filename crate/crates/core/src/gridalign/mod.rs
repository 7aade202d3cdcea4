//! Scattered-data resampling of a field from one node set onto another.

mod kdtree;

pub use kdtree::{Neighbor, SpatialIndex};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldio::{FidelityPair, FieldDataset, Node};

/// Targets closer than this to a source node take its value verbatim.
pub const EXACT_HIT_DISTANCE: f64 = 1e-12;

pub const DEFAULT_IDW_POWER: f64 = 2.0;
pub const DEFAULT_IDW_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum InterpMethod {
    Nearest,
    /// Inverse-distance weighting over the `k` nearest source nodes with
    /// weights `d^-power`.
    Idw {
        power: f64,
        k: usize,
    },
}

impl Default for InterpMethod {
    fn default() -> Self {
        InterpMethod::Idw {
            power: DEFAULT_IDW_POWER,
            k: DEFAULT_IDW_K,
        }
    }
}

impl InterpMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InterpMethod::Nearest => Ok(()),
            InterpMethod::Idw { power, k } => {
                if !(power > 0.0 && power.is_finite()) {
                    return Err(Error::InvalidMethod(format!(
                        "idw power must be positive, got {power}"
                    )));
                }
                if k == 0 {
                    return Err(Error::InvalidMethod("idw k must be at least 1".into()));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for InterpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpMethod::Nearest => write!(f, "nearest"),
            InterpMethod::Idw { power, k } => write!(f, "idw(power={power},k={k})"),
        }
    }
}

/// Accepts `nearest`, `idw`, or `idw:<power>:<k>`.
impl FromStr for InterpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let method = match parts.as_slice() {
            ["nearest"] => InterpMethod::Nearest,
            ["idw"] => InterpMethod::default(),
            ["idw", power, k] => InterpMethod::Idw {
                power: power
                    .parse()
                    .map_err(|_| Error::InvalidMethod(format!("bad idw power `{power}`")))?,
                k: k.parse()
                    .map_err(|_| Error::InvalidMethod(format!("bad idw k `{k}`")))?,
            },
            _ => {
                return Err(Error::InvalidMethod(format!(
                    "`{s}` (expected nearest, idw or idw:<power>:<k>)"
                )))
            }
        };
        method.validate()?;
        Ok(method)
    }
}

pub fn build_index(nodes: &[Node]) -> Result<SpatialIndex> {
    SpatialIndex::build(nodes)
}

/// Resample `source` onto `targets`. Returns one value per target, in
/// target order; an empty target list gives an empty result.
pub fn interpolate(
    source: &FieldDataset,
    targets: &[Node],
    method: InterpMethod,
) -> Result<Vec<f64>> {
    method.validate()?;
    if let InterpMethod::Idw { k, .. } = method {
        if k > source.len() {
            return Err(Error::NeighborCount {
                k,
                available: source.len(),
            });
        }
    }
    if let Some(i) = targets
        .iter()
        .position(|t| !t[0].is_finite() || !t[1].is_finite())
    {
        return Err(Error::NonFinite {
            context: format!("interpolation target {i}"),
        });
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let index = SpatialIndex::build(source.nodes())?;
    Ok(interpolate_with(&index, source.values(), targets, method))
}

/// Interpolation against a prebuilt index whose nodes carry `values`.
pub fn interpolate_with(
    index: &SpatialIndex,
    values: &[f64],
    targets: &[Node],
    method: InterpMethod,
) -> Vec<f64> {
    let hit_sq = EXACT_HIT_DISTANCE * EXACT_HIT_DISTANCE;
    targets
        .iter()
        .map(|t| match method {
            InterpMethod::Nearest => values[index.nearest(t).index],
            InterpMethod::Idw { power, k } => {
                let neighbors = index.k_nearest(t, k);
                if neighbors[0].dist_sq <= hit_sq {
                    return values[neighbors[0].index];
                }
                idw_value(&neighbors, values, power)
            }
        })
        .collect()
}

fn idw_value(neighbors: &[Neighbor], values: &[f64], power: f64) -> f64 {
    // Weights relative to the closest neighbor stay in (0, 1], which avoids
    // overflow for tiny distances or large powers.
    let d_min = neighbors[0].dist_sq.sqrt();
    let (mut num, mut den) = (0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in neighbors {
        let w = (d_min / n.dist_sq.sqrt()).powf(power);
        let v = values[n.index];
        num += w * v;
        den += w;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // The exact weighted mean lies in [lo, hi]; clamp away rounding excess.
    (num / den).clamp(lo, hi)
}

/// Resample the high-fidelity field onto the low-fidelity nodes.
pub fn align_pair(
    lf: &FieldDataset,
    hf: &FieldDataset,
    method: InterpMethod,
) -> Result<FidelityPair> {
    let values = interpolate(hf, lf.nodes(), method)?;
    let hf_on_lf = lf.with_values(format!("{} on {}", hf.name(), lf.name()), values)?;
    let mut pair = FidelityPair::new(lf.clone(), hf_on_lf)?;
    pair.hf_raw = Some(hf.clone());
    pair.alignment = Some(method);
    Ok(pair)
}
