use std::collections::BTreeMap;

/// Operation families tracked by [`FlopCounter`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlopKind {
    /// Multiply-add counts as two operations: `2·m·k·n`.
    Matmul,
    /// One per output element.
    Elementwise,
    /// exp + sum + divide: three per element.
    Softmax,
    /// mean, centre, square, variance, scale: five per element.
    LayerNorm,
    /// One per reduced input element.
    Reduction,
}

impl FlopKind {
    pub fn name(self) -> &'static str {
        match self {
            FlopKind::Matmul => "matmul",
            FlopKind::Elementwise => "elementwise",
            FlopKind::Softmax => "softmax",
            FlopKind::LayerNorm => "layer_norm",
            FlopKind::Reduction => "reduction",
        }
    }
}

pub const SOFTMAX_FLOPS_PER_ELEM: u64 = 3;
pub const LAYER_NORM_FLOPS_PER_ELEM: u64 = 5;

/// Forward-pass floating-point operation tally.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    total: u64,
    by_kind: BTreeMap<FlopKind, u64>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, kind: FlopKind, count: u64) {
        self.total += count;
        *self.by_kind.entry(kind).or_insert(0) += count;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, kind: FlopKind) -> u64 {
        self.by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn breakdown(&self) -> &BTreeMap<FlopKind, u64> {
        &self.by_kind
    }

    pub fn reset(&mut self) {
        self.total = 0;
        self.by_kind.clear();
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        for (&k, &v) in &other.by_kind {
            self.add(k, v);
        }
    }
}
