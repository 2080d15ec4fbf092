//! Training-free model of architecture families.
//!
//! An [`ArchSpec`] describes the fixed structure of a network family (layer
//! kinds, kernels, block/shortcut layout, input shape, class count) while a
//! [`WidthConfig`] carries the per-prunable-layer widths. Everything here is
//! pure arithmetic: the central operation is [`count_params`], the exact total
//! parameter count of a configuration, together with a continuous-width
//! evaluator and its analytic gradient used by the budget solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture family. Determines block/shortcut semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Plain chain of convolutions (VGG-like).
    FeedforwardConv,
    /// Basic residual blocks of two 3x3 convolutions (ResNet-like).
    Residual,
    /// Inverted bottleneck blocks: expand, depthwise, project (MobileNetV2-like).
    InvertedBottleneck,
    /// Fully-connected chain (MLP).
    Dense,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::FeedforwardConv => "feedforward-conv",
            Family::Residual => "residual",
            Family::InvertedBottleneck => "inverted-bottleneck",
            Family::Dense => "dense",
        }
    }

    pub fn has_blocks(&self) -> bool {
        matches!(self, Family::Residual | Family::InvertedBottleneck)
    }
}

/// Input tensor shape: an image (channels, height, width) or a flat feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum InputShape {
    #[serde(rename = "image")]
    Image { channels: usize, height: usize, width: usize },
    #[serde(rename = "features")]
    Features { dim: usize },
}

impl InputShape {
    /// Channel (or feature) count seen by the first layer.
    pub fn fan_in(&self) -> usize {
        match self {
            InputShape::Image { channels, .. } => *channels,
            InputShape::Features { dim } => *dim,
        }
    }
}

/// Layer kind. Kernel sizes only exist for spatial convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv { kernel: (usize, usize) },
    DepthwiseConv { kernel: (usize, usize) },
    PointwiseConv,
    Dense,
}

impl LayerKind {
    pub fn is_conv(&self) -> bool {
        !matches!(self, LayerKind::Dense)
    }

    /// kh * kw (1 for pointwise and dense layers).
    pub fn kernel_elems(&self) -> usize {
        match self {
            LayerKind::Conv { kernel } | LayerKind::DepthwiseConv { kernel } => kernel.0 * kernel.1,
            LayerKind::PointwiseConv | LayerKind::Dense => 1,
        }
    }
}

/// How a layer's output width is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidthRule {
    /// Width is a free variable of the search; `default` is the family's stock value.
    Prunable { default: usize },
    /// Width is `factor` times the layer's input width (bottleneck expansion).
    Expansion { factor: usize },
    /// Width equals the input width (depthwise convolutions).
    MatchInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub width: WidthRule,
    /// Whether a per-channel normalization unit (with affine pair) follows the layer.
    pub has_norm_gate: bool,
    /// Residual/bottleneck block this layer belongs to, if any.
    pub block_id: Option<usize>,
    pub stride: usize,
    /// Spatial downsampling (2x2 max pool) after this layer (VGG-style chains).
    #[serde(default)]
    pub pool_after: bool,
}

/// Immutable description of an architecture family. Widths are not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub family: Family,
    pub layers: Vec<LayerSpec>,
    pub input_shape: InputShape,
    pub num_classes: usize,
    /// Present iff family is inverted-bottleneck.
    pub expansion_factor: Option<usize>,
}

/// Positive integer width per prunable layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthConfig {
    pub widths: Vec<usize>,
}

impl WidthConfig {
    pub fn new(widths: Vec<usize>) -> Self {
        WidthConfig { widths }
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }
}

impl From<Vec<usize>> for WidthConfig {
    fn from(widths: Vec<usize>) -> Self {
        WidthConfig { widths }
    }
}

/// Shortcut connection kind of a residual/bottleneck block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShortcutKind {
    /// Pass-through; only valid when block in/out widths match and stride is 1.
    Identity,
    /// 1x1 projection convolution (plus its normalization pair when the block is normalized).
    Conv1x1,
}

/// A single violation found by [`validate_widths`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    LengthMismatch { expected: usize, got: usize },
    NonPositiveWidth { layer: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::LengthMismatch { expected, got } => {
                write!(f, "width vector has {got} entries, expected {expected}")
            }
            Violation::NonPositiveWidth { layer } => {
                write!(f, "width at prunable layer {layer} must be >= 1")
            }
        }
    }
}

/// Outcome of structural width validation; empty iff the configuration is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Block boundaries derived from consecutive `block_id` runs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockInfo {
    pub id: usize,
    /// Index of the first layer of the block.
    pub first: usize,
    /// Index of the last layer of the block (its output layer).
    pub last: usize,
    /// Max stride among block layers.
    pub stride: usize,
}

impl ArchSpec {
    /// Number of prunable layers (the dimension of a width configuration).
    pub fn prunable_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.width, WidthRule::Prunable { .. }))
            .count()
    }

    /// Stock widths of the family (the `default` of each prunable layer).
    pub fn default_widths(&self) -> WidthConfig {
        WidthConfig::new(
            self.layers
                .iter()
                .filter_map(|l| match l.width {
                    WidthRule::Prunable { default } => Some(default),
                    _ => None,
                })
                .collect(),
        )
    }

    /// Structural invariants that do not depend on widths.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArch("architecture has no layers".into()));
        }
        if self.num_classes < 1 {
            return Err(Error::InvalidArch("num_classes must be >= 1".into()));
        }
        if self.prunable_count() == 0 {
            return Err(Error::InvalidArch("no prunable layers".into()));
        }
        match (self.family, self.expansion_factor) {
            (Family::InvertedBottleneck, None) => {
                return Err(Error::InvalidArch(
                    "inverted-bottleneck family requires expansion_factor".into(),
                ))
            }
            (Family::InvertedBottleneck, Some(f)) if f < 1 => {
                return Err(Error::InvalidArch("expansion_factor must be >= 1".into()))
            }
            (f, Some(_)) if f != Family::InvertedBottleneck => {
                return Err(Error::InvalidArch(format!(
                    "expansion_factor is only valid for inverted-bottleneck, not {}",
                    f.as_str()
                )))
            }
            _ => {}
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.stride < 1 {
                return Err(Error::InvalidArch(format!("layer {i}: stride must be >= 1")));
            }
            match (self.family, l.kind) {
                (Family::Dense, LayerKind::Dense) => {}
                (Family::Dense, _) => {
                    return Err(Error::InvalidArch(format!(
                        "layer {i}: dense family admits only dense layers"
                    )))
                }
                (_, LayerKind::Dense) => {
                    return Err(Error::InvalidArch(format!(
                        "layer {i}: dense layers are only valid in the dense family"
                    )))
                }
                _ => {}
            }
            if matches!(l.kind, LayerKind::DepthwiseConv { .. })
                && !matches!(l.width, WidthRule::MatchInput)
            {
                return Err(Error::InvalidArch(format!(
                    "layer {i}: depthwise layers must use the match-input width rule"
                )));
            }
            if matches!(l.width, WidthRule::Expansion { .. })
                && self.family != Family::InvertedBottleneck
            {
                return Err(Error::InvalidArch(format!(
                    "layer {i}: expansion widths only occur in the inverted-bottleneck family"
                )));
            }
            if l.block_id.is_some() && !self.family.has_blocks() {
                return Err(Error::InvalidArch(format!(
                    "layer {i}: block_id set but the {} family has no blocks",
                    self.family.as_str()
                )));
            }
        }
        // Block ids must form consecutive runs in increasing order.
        let mut last_id: Option<usize> = None;
        let mut seen: Vec<usize> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l.block_id {
                Some(id) => {
                    if last_id != Some(id) {
                        if seen.contains(&id) {
                            return Err(Error::InvalidArch(format!(
                                "layer {i}: block {id} is not a consecutive run"
                            )));
                        }
                        seen.push(id);
                    }
                    last_id = Some(id);
                }
                None => last_id = None,
            }
        }
        Ok(())
    }

    pub(crate) fn blocks(&self) -> Vec<BlockInfo> {
        let mut out = Vec::new();
        let mut cur: Option<BlockInfo> = None;
        for (i, l) in self.layers.iter().enumerate() {
            match (l.block_id, cur.as_mut()) {
                (Some(id), Some(b)) if b.id == id => {
                    b.last = i;
                    b.stride = b.stride.max(l.stride);
                }
                (Some(id), _) => {
                    if let Some(b) = cur.take() {
                        out.push(b);
                    }
                    cur = Some(BlockInfo { id, first: i, last: i, stride: l.stride });
                }
                (None, _) => {
                    if let Some(b) = cur.take() {
                        out.push(b);
                    }
                }
            }
        }
        if let Some(b) = cur.take() {
            out.push(b);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Width resolution and the parameter-count formula
// ---------------------------------------------------------------------------

/// Width of a layer as a linear function of at most one prunable variable:
/// `scale * phi[var]`, or the constant `scale` when `var` is `None`.
#[derive(Debug, Clone, Copy)]
struct LinWidth {
    scale: u64,
    var: Option<usize>,
}

impl LinWidth {
    fn constant(c: u64) -> Self {
        LinWidth { scale: c, var: None }
    }

    fn eval_u64(&self, phi: &[usize]) -> u64 {
        match self.var {
            Some(v) => self.scale * phi[v] as u64,
            None => self.scale,
        }
    }

    fn eval_f64(&self, phi: &[f64]) -> f64 {
        match self.var {
            Some(v) => self.scale as f64 * phi[v],
            None => self.scale as f64,
        }
    }
}

/// One additive contribution to the parameter count: `coeff * a * b`
/// (`b` absent for terms linear in a single width).
#[derive(Debug, Clone, Copy)]
struct Term {
    coeff: u64,
    a: LinWidth,
    b: Option<LinWidth>,
}

impl Term {
    fn eval_u64(&self, phi: &[usize]) -> u64 {
        let mut v = self.coeff * self.a.eval_u64(phi);
        if let Some(b) = self.b {
            v *= b.eval_u64(phi);
        }
        v
    }

    fn eval_f64(&self, phi: &[f64]) -> f64 {
        let mut v = self.coeff as f64 * self.a.eval_f64(phi);
        if let Some(b) = self.b {
            v *= b.eval_f64(phi);
        }
        v
    }

    /// Accumulate d(term)/d(phi) into `grad`.
    fn add_grad(&self, phi: &[f64], grad: &mut [f64]) {
        let c = self.coeff as f64;
        match self.b {
            None => {
                if let Some(v) = self.a.var {
                    grad[v] += c * self.a.scale as f64;
                }
            }
            Some(b) => {
                if let Some(v) = self.a.var {
                    grad[v] += c * self.a.scale as f64 * b.eval_f64(phi);
                }
                if let Some(v) = b.var {
                    grad[v] += c * b.scale as f64 * self.a.eval_f64(phi);
                }
            }
        }
    }
}

/// Per-layer symbolic widths plus block shortcut expressions.
struct ResolvedWidths {
    /// Output width expression of each layer, in chain order.
    out: Vec<LinWidth>,
    /// Input width expression of each layer.
    inp: Vec<LinWidth>,
    /// (input expr, output expr, normalized, stride) per block, in block order.
    block_io: Vec<(LinWidth, LinWidth, bool, usize)>,
}

fn resolve_symbolic(arch: &ArchSpec) -> Result<ResolvedWidths> {
    let mut out = Vec::with_capacity(arch.layers.len());
    let mut inp = Vec::with_capacity(arch.layers.len());
    let mut prev = LinWidth::constant(arch.input_shape.fan_in() as u64);
    let mut var_idx = 0usize;
    for l in &arch.layers {
        inp.push(prev);
        let w = match l.width {
            WidthRule::Prunable { .. } => {
                let w = LinWidth { scale: 1, var: Some(var_idx) };
                var_idx += 1;
                w
            }
            WidthRule::Expansion { factor } => LinWidth {
                scale: prev.scale * factor as u64,
                var: prev.var,
            },
            WidthRule::MatchInput => prev,
        };
        out.push(w);
        prev = w;
    }
    let mut block_io = Vec::new();
    for b in arch.blocks() {
        let bin = inp[b.first];
        let bout = out[b.last];
        let normed = arch.layers[b.last].has_norm_gate;
        block_io.push((bin, bout, normed, b.stride));
    }
    Ok(ResolvedWidths { out, inp, block_io })
}

/// Largest per-layer width the integer count evaluates without risking
/// u64 overflow in any product term.
pub const MAX_WIDTH: usize = 1 << 20;

/// Turn the first width violation, if any, into an error.
fn check_widths(arch: &ArchSpec, widths: &WidthConfig) -> Result<()> {
    match validate_widths(arch, widths).violations.into_iter().next() {
        None => {
            if let Some((layer, &w)) =
                widths.widths.iter().enumerate().find(|(_, &w)| w > MAX_WIDTH)
            {
                return Err(Error::InvalidArgument(format!(
                    "width {w} at layer {layer} exceeds the supported maximum {MAX_WIDTH}"
                )));
            }
            Ok(())
        }
        Some(Violation::LengthMismatch { expected, got }) => {
            Err(Error::WidthLengthMismatch { expected, got })
        }
        Some(Violation::NonPositiveWidth { layer }) => {
            Err(Error::InvalidWidth { layer, value: widths.widths[layer] as i64 })
        }
    }
}

/// Structural validation of a width configuration against an architecture.
///
/// Errors are the output: the report lists every violation with its layer index.
pub fn validate_widths(arch: &ArchSpec, widths: &WidthConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let expected = arch.prunable_count();
    if widths.len() != expected {
        report
            .violations
            .push(Violation::LengthMismatch { expected, got: widths.len() });
        return report;
    }
    for (i, &w) in widths.widths.iter().enumerate() {
        if w < 1 {
            report.violations.push(Violation::NonPositiveWidth { layer: i });
        }
    }
    report
}

fn shortcut_kind(in_w: f64, out_w: f64, stride: usize) -> ShortcutKind {
    if stride == 1 && in_w == out_w {
        ShortcutKind::Identity
    } else {
        ShortcutKind::Conv1x1
    }
}

/// Resolve the shortcut connection of every residual/bottleneck block for a
/// concrete width configuration: identity where block in/out widths match and
/// the stride is 1, a 1x1 projection convolution otherwise.
pub fn resolve_shortcuts(arch: &ArchSpec, widths: &WidthConfig) -> Result<Vec<ShortcutKind>> {
    if !arch.family.has_blocks() {
        return Err(Error::UnsupportedFamily {
            family: arch.family.as_str(),
            op: "resolve_shortcuts",
        });
    }
    check_widths(arch, widths)?;
    let sym = resolve_symbolic(arch)?;
    Ok(sym
        .block_io
        .iter()
        .map(|(bin, bout, _, stride)| {
            shortcut_kind(
                bin.eval_u64(&widths.widths) as f64,
                bout.eval_u64(&widths.widths) as f64,
                *stride,
            )
        })
        .collect())
}

fn resolve_shortcuts_real(arch: &ArchSpec, phi: &[f64]) -> Result<Vec<ShortcutKind>> {
    let sym = resolve_symbolic(arch)?;
    Ok(sym
        .block_io
        .iter()
        .map(|(bin, bout, _, stride)| shortcut_kind(bin.eval_f64(phi), bout.eval_f64(phi), *stride))
        .collect())
}

/// Assemble the additive terms of the parameter-count formula for a fixed
/// shortcut resolution. Counting convention: conv weights without bias,
/// normalization affine pairs (2 per channel), dense weights plus biases,
/// 1x1-projection shortcut weights (plus their affine pair when the block is
/// normalized), and the classifier (`last_width * num_classes + num_classes`).
fn param_terms(arch: &ArchSpec, shortcuts: &[ShortcutKind]) -> Result<Vec<Term>> {
    let sym = resolve_symbolic(arch)?;
    if arch.family.has_blocks() && shortcuts.len() != sym.block_io.len() {
        return Err(Error::InvalidArch(format!(
            "expected {} shortcut kinds, got {}",
            sym.block_io.len(),
            shortcuts.len()
        )));
    }
    let mut terms = Vec::new();
    for (i, l) in arch.layers.iter().enumerate() {
        let inp = sym.inp[i];
        let out = sym.out[i];
        match l.kind {
            LayerKind::Conv { .. } | LayerKind::PointwiseConv => {
                terms.push(Term { coeff: l.kind.kernel_elems() as u64, a: inp, b: Some(out) });
            }
            LayerKind::DepthwiseConv { .. } => {
                terms.push(Term { coeff: l.kind.kernel_elems() as u64, a: out, b: None });
            }
            LayerKind::Dense => {
                terms.push(Term { coeff: 1, a: inp, b: Some(out) });
                terms.push(Term { coeff: 1, a: out, b: None }); // bias
            }
        }
        if l.has_norm_gate {
            terms.push(Term { coeff: 2, a: out, b: None });
        }
    }
    for ((bin, bout, normed, _), kind) in sym.block_io.iter().zip(shortcuts) {
        if *kind == ShortcutKind::Conv1x1 {
            terms.push(Term { coeff: 1, a: *bin, b: Some(*bout) });
            if *normed {
                terms.push(Term { coeff: 2, a: *bout, b: None });
            }
        }
    }
    // Classifier: final width -> num_classes, with bias. Never prunable.
    let last = *sym.out.last().expect("validated non-empty");
    let classes = arch.num_classes as u64;
    terms.push(Term { coeff: classes, a: last, b: None });
    Ok(terms)
}

/// Exact total parameter count `h(phi)` of a width configuration.
///
/// Deterministic, and strictly increasing in each width entry under a fixed
/// shortcut resolution. Crossing a width-equality boundary of a block can
/// retire its projection shortcut, which may outweigh the marginal gain of
/// the extra channel on very small blocks.
pub fn count_params(arch: &ArchSpec, widths: &WidthConfig) -> Result<u64> {
    check_widths(arch, widths)?;
    let shortcuts = if arch.family.has_blocks() {
        resolve_shortcuts(arch, widths)?
    } else {
        Vec::new()
    };
    count_params_with_shortcuts(arch, widths, &shortcuts)
}

/// Parameter count with an explicitly pinned shortcut resolution.
///
/// Used to isolate the exact cost of a single shortcut toggle and to keep the
/// formula piecewise-smooth around width-equality boundaries.
pub fn count_params_with_shortcuts(
    arch: &ArchSpec,
    widths: &WidthConfig,
    shortcuts: &[ShortcutKind],
) -> Result<u64> {
    check_widths(arch, widths)?;
    let terms = param_terms(arch, shortcuts)?;
    let mut total = arch.num_classes as u64; // classifier bias
    for t in &terms {
        total += t.eval_u64(&widths.widths);
    }
    Ok(total)
}

/// `h` on continuous (real-valued) widths: the same formula with real phi.
///
/// Shortcuts are resolved on the real widths; rounding happens only when a
/// configuration is finally emitted.
pub fn count_params_real(arch: &ArchSpec, phi: &[f64]) -> Result<f64> {
    if phi.len() != arch.prunable_count() {
        return Err(Error::WidthLengthMismatch { expected: arch.prunable_count(), got: phi.len() });
    }
    if let Some(&bad) = phi.iter().find(|w| !w.is_finite() || **w <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "continuous widths must be finite and positive, got {bad}"
        )));
    }
    let shortcuts = resolve_shortcuts_real(arch, phi)?;
    let terms = param_terms(arch, &shortcuts)?;
    let mut total = arch.num_classes as f64;
    for t in &terms {
        total += t.eval_f64(phi);
    }
    Ok(total)
}

/// Analytic gradient of [`count_params_real`] with respect to each prunable width.
pub fn param_count_gradient(arch: &ArchSpec, phi: &[f64]) -> Result<Vec<f64>> {
    if phi.len() != arch.prunable_count() {
        return Err(Error::WidthLengthMismatch { expected: arch.prunable_count(), got: phi.len() });
    }
    let shortcuts = resolve_shortcuts_real(arch, phi)?;
    let terms = param_terms(arch, &shortcuts)?;
    let mut grad = vec![0.0; phi.len()];
    for t in &terms {
        t.add_grad(phi, &mut grad);
    }
    Ok(grad)
}

/// Round half away from zero, clamped to at least 1.
pub(crate) fn round_width(x: f64) -> usize {
    let r = (x + 0.5).floor();
    if r < 1.0 {
        1
    } else {
        r as usize
    }
}

/// Scale every default width by a constant ratio, rounding to the nearest
/// integer (half away from zero) and clamping to at least 1.
pub fn uniform_widths(arch: &ArchSpec, ratio: f64) -> Result<WidthConfig> {
    if ratio.is_nan() || ratio <= 0.0 || !ratio.is_finite() {
        return Err(Error::InvalidArgument(format!("ratio must be > 0, got {ratio}")));
    }
    Ok(WidthConfig::new(
        arch.default_widths()
            .widths
            .iter()
            .map(|&w| round_width(w as f64 * ratio))
            .collect(),
    ))
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

fn conv3(width: usize, pool_after: bool) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Conv { kernel: (3, 3) },
        width: WidthRule::Prunable { default: width },
        has_norm_gate: true,
        block_id: None,
        stride: 1,
        pool_after,
    }
}

fn vgg11(input_shape: InputShape, num_classes: usize) -> ArchSpec {
    let widths = [64, 128, 256, 256, 512, 512, 512, 512];
    let pools = [true, true, false, true, false, true, false, true];
    ArchSpec {
        name: "vgg11".into(),
        family: Family::FeedforwardConv,
        layers: widths
            .iter()
            .zip(pools)
            .map(|(&w, p)| conv3(w, p))
            .collect(),
        input_shape,
        num_classes,
        expansion_factor: None,
    }
}

fn resnet18(input_shape: InputShape, num_classes: usize) -> ArchSpec {
    let mut layers = vec![conv3(64, false)];
    let stage_widths = [64, 128, 256, 512];
    let stage_strides = [1, 2, 2, 2];
    let mut block_id = 0;
    for (w, s0) in stage_widths.iter().zip(stage_strides) {
        for b in 0..2 {
            let stride = if b == 0 { s0 } else { 1 };
            for st in [stride, 1] {
                layers.push(LayerSpec {
                    kind: LayerKind::Conv { kernel: (3, 3) },
                    width: WidthRule::Prunable { default: *w },
                    has_norm_gate: true,
                    block_id: Some(block_id),
                    stride: st,
                    pool_after: false,
                });
            }
            block_id += 1;
        }
    }
    ArchSpec {
        name: "resnet18".into(),
        family: Family::Residual,
        layers,
        input_shape,
        num_classes,
        expansion_factor: None,
    }
}

fn mobilenetv2(input_shape: InputShape, num_classes: usize) -> ArchSpec {
    // (expansion, out width, repeats, first stride)
    let cfg: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 1),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let mut layers = vec![LayerSpec {
        kind: LayerKind::Conv { kernel: (3, 3) },
        width: WidthRule::Prunable { default: 32 },
        has_norm_gate: true,
        block_id: None,
        stride: 1,
        pool_after: false,
    }];
    let mut block_id = 0;
    for (t, w, n, s0) in cfg {
        for b in 0..n {
            let stride = if b == 0 { s0 } else { 1 };
            layers.push(LayerSpec {
                kind: LayerKind::PointwiseConv,
                width: WidthRule::Expansion { factor: t },
                has_norm_gate: true,
                block_id: Some(block_id),
                stride: 1,
                pool_after: false,
            });
            layers.push(LayerSpec {
                kind: LayerKind::DepthwiseConv { kernel: (3, 3) },
                width: WidthRule::MatchInput,
                has_norm_gate: true,
                block_id: Some(block_id),
                stride,
                pool_after: false,
            });
            layers.push(LayerSpec {
                kind: LayerKind::PointwiseConv,
                width: WidthRule::Prunable { default: w },
                has_norm_gate: true,
                block_id: Some(block_id),
                stride: 1,
                pool_after: false,
            });
            block_id += 1;
        }
    }
    layers.push(LayerSpec {
        kind: LayerKind::PointwiseConv,
        width: WidthRule::Prunable { default: 1280 },
        has_norm_gate: true,
        block_id: None,
        stride: 1,
        pool_after: false,
    });
    ArchSpec {
        name: "mobilenetv2".into(),
        family: Family::InvertedBottleneck,
        layers,
        input_shape,
        num_classes,
        expansion_factor: Some(6),
    }
}

fn mlp(input_shape: InputShape, num_classes: usize) -> ArchSpec {
    mlp_with_widths("mlp", input_shape, num_classes, &[128, 128, 128, 128])
}

/// Build a plain MLP spec with the given hidden widths (no normalization).
pub fn mlp_with_widths(
    name: &str,
    input_shape: InputShape,
    num_classes: usize,
    hidden: &[usize],
) -> ArchSpec {
    ArchSpec {
        name: name.into(),
        family: Family::Dense,
        layers: hidden
            .iter()
            .map(|&w| LayerSpec {
                kind: LayerKind::Dense,
                width: WidthRule::Prunable { default: w },
                has_norm_gate: false,
                block_id: None,
                stride: 1,
                pool_after: false,
            })
            .collect(),
        input_shape,
        num_classes,
        expansion_factor: None,
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 4] = ["vgg11", "resnet18", "mobilenetv2", "mlp"];

/// Load a built-in architecture by name with its canonical input/class setup.
pub fn preset(name: &str) -> Result<ArchSpec> {
    let (input, classes) = match name {
        "vgg11" => (InputShape::Image { channels: 3, height: 32, width: 32 }, 10),
        "resnet18" => (InputShape::Image { channels: 3, height: 64, width: 64 }, 200),
        "mobilenetv2" => (InputShape::Image { channels: 3, height: 32, width: 32 }, 100),
        "mlp" => (InputShape::Features { dim: 64 }, 10),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (expected one of {PRESET_NAMES:?})"
            )))
        }
    };
    preset_with(name, input, classes)
}

/// Load a built-in architecture with an explicit input shape and class count.
pub fn preset_with(name: &str, input_shape: InputShape, num_classes: usize) -> Result<ArchSpec> {
    let arch = match name {
        "vgg11" => vgg11(input_shape, num_classes),
        "resnet18" => resnet18(input_shape, num_classes),
        "mobilenetv2" => mobilenetv2(input_shape, num_classes),
        "mlp" => mlp(input_shape, num_classes),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (expected one of {PRESET_NAMES:?})"
            )))
        }
    };
    arch.validate()?;
    Ok(arch)
}
