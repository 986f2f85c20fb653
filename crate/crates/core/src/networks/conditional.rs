use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone)]
struct Entry {
    layer: usize,
    channels: usize,
    weight: ParamId,
    bias: ParamId,
}

/// Per-layer, per-domain affine vectors `(e_w, e_b)`.
///
/// Tables start at `e_w = 1`, `e_b = 0`, which makes a conditional network
/// compute exactly what its unconditional twin does.
#[derive(Debug, Clone)]
pub struct DomainEmbeddingTable {
    entries: Vec<Entry>,
    num_domains: usize,
}

impl DomainEmbeddingTable {
    /// `layers` lists `(layer id, channel count)` pairs.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        layers: &[(usize, usize)],
        num_domains: usize,
    ) -> Self {
        let entries = layers
            .iter()
            .map(|&(layer, channels)| Entry {
                layer,
                channels,
                weight: store.add(
                    format!("{prefix}.embed{layer}.weight"),
                    Tensor::ones(&[num_domains, channels]),
                ),
                bias: store.add(
                    format!("{prefix}.embed{layer}.bias"),
                    Tensor::zeros(&[num_domains, channels]),
                ),
            })
            .collect();
        Self { entries, num_domains }
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn layers(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.layer).collect()
    }

    pub fn has_layer(&self, layer: usize) -> bool {
        self.entries.iter().any(|e| e.layer == layer)
    }

    /// Parameter ids of the `(e_w, e_b)` tables for `layer`.
    pub fn params_for(&self, layer: usize) -> Option<(ParamId, ParamId)> {
        self.entries
            .iter()
            .find(|e| e.layer == layer)
            .map(|e| (e.weight, e.bias))
    }
}

/// `F′[n, ch] = F[n, ch] · e_w[domain_n, ch] + e_b[domain_n, ch]`.
pub fn conditional_modulate<'t, T: Float>(
    features: Var<'t, T>,
    domains: &[usize],
    layer: usize,
    table: &DomainEmbeddingTable,
    params: &Bound<'t, T>,
) -> Result<Var<'t, T>> {
    let entry = table
        .entries
        .iter()
        .find(|e| e.layer == layer)
        .ok_or_else(|| Error::InvalidArgument(format!("no embedding for layer {layer}")))?;
    if let Some(&bad) = domains.iter().find(|&&d| d >= table.num_domains) {
        return Err(Error::InvalidArgument(format!(
            "no embedding for (layer {layer}, domain {bad})"
        )));
    }
    let shape = features.shape();
    if shape.len() < 2 || shape[1] != entry.channels || shape[0] != domains.len() {
        return Err(Error::Shape(format!(
            "features {:?} do not match {} channels × {} domains",
            shape,
            entry.channels,
            domains.len()
        )));
    }
    let ew = params.get(entry.weight).gather_rows(domains);
    let eb = params.get(entry.bias).gather_rows(domains);
    Ok(features.scale_channels(ew).shift_channels(eb))
}
