//! Symmetric encoder-decoder with skip connections.
//!
//! At scale `l` the encoder computes `s_e = F_e(x_e)` and pools it to the next
//! scale. The decoder upsamples the coarser map back (onto the grid the encoder
//! selected, for adaptive variants), concatenates it with `s_e` and applies
//! `F_d`. Each adaptive pooling layer hands its polyphase index to exactly one
//! upsampling layer at the same scale.

use std::fmt;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, conv2d_circular, upsample_block, Block, BlockSpec, ConvKernel};
use crate::sampling::{
    strided_pool_detailed, ApsSelection, NormOrder, PolyphaseIndex, SamplingVariant,
};
use crate::tensor::{Shift, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Number of stride-2 sampling layers.
    pub scales: usize,
    /// Feature widths per scale, `scales + 1` entries.
    pub channels: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd convolution kernel size.
    pub kernel_size: usize,
    /// 1 for signals, 2 for images.
    pub spatial_rank: usize,
    pub variant: SamplingVariant,
    pub p: NormOrder,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            scales: 3,
            channels: vec![8, 16, 32, 64],
            in_channels: 1,
            out_channels: 1,
            kernel_size: 3,
            spatial_rank: 2,
            variant: SamplingVariant::Aps,
            p: NormOrder::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Default widths `base, 2*base, 4*base, ...` for `scales` sampling layers.
    pub fn doubling_widths(scales: usize, base: usize) -> Vec<usize> {
        (0..=scales).map(|l| base << l).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channels.len() != self.scales + 1 {
            return bad(format!(
                "{} scales need {} widths, got {}",
                self.scales,
                self.scales + 1,
                self.channels.len()
            ));
        }
        if self.channels.contains(&0) {
            return bad("channel widths must be at least 1".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("input and output channel counts must be at least 1".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        if !(1..=2).contains(&self.spatial_rank) {
            return bad(format!("spatial rank {} must be 1 or 2", self.spatial_rank));
        }
        if self.scales >= 32 {
            return bad("too many scales".into());
        }
        Ok(())
    }

    /// Every spatial extent of the input must be divisible by this.
    pub fn extent_multiple(&self) -> usize {
        1 << self.scales
    }

    fn kernel_extent(&self) -> (usize, usize) {
        if self.spatial_rank == 1 {
            (1, self.kernel_size)
        } else {
            (self.kernel_size, self.kernel_size)
        }
    }

    /// Parses the `key=value` header written by [`fmt::Display`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = NetworkConfig::default();
        let mut seen_channels = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("expected key=value, got `{line}`")))?;
            let num = |v: &str| -> Result<usize> {
                v.trim()
                    .parse()
                    .map_err(|_| Error::format(format!("bad value for {key}: `{v}`")))
            };
            match key.trim() {
                "scales" => cfg.scales = num(value)?,
                "channels" => {
                    cfg.channels = value.split(',').map(num).collect::<Result<_>>()?;
                    seen_channels = true;
                }
                "in_channels" => cfg.in_channels = num(value)?,
                "out_channels" => cfg.out_channels = num(value)?,
                "kernel" => cfg.kernel_size = num(value)?,
                "dims" => cfg.spatial_rank = num(value)?,
                "variant" => cfg.variant = value.trim().parse()?,
                "p" => {
                    let p: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| Error::format(format!("bad norm order `{value}`")))?;
                    cfg.p = NormOrder::new(p)?;
                }
                "seed" => {
                    cfg.seed = value
                        .trim()
                        .parse()
                        .map_err(|_| Error::format(format!("bad seed `{value}`")))?
                }
                other => return Err(Error::format(format!("unknown config key `{other}`"))),
            }
        }
        if !seen_channels {
            cfg.channels = NetworkConfig::doubling_widths(cfg.scales, 8);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        writeln!(f, "scales={}", self.scales)?;
        writeln!(f, "channels={}", widths.join(","))?;
        writeln!(f, "in_channels={}", self.in_channels)?;
        writeln!(f, "out_channels={}", self.out_channels)?;
        writeln!(f, "kernel={}", self.kernel_size)?;
        writeln!(f, "dims={}", self.spatial_rank)?;
        writeln!(f, "variant={}", self.variant)?;
        writeln!(f, "p={}", self.p.value())?;
        writeln!(f, "seed={}", self.seed)
    }
}

/// Polyphase selections recorded by the encoder, finest scale first. Empty
/// for non-adaptive variants.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexTrace {
    pub selections: Vec<ApsSelection>,
}

impl IndexTrace {
    pub fn indices(&self) -> impl Iterator<Item = &PolyphaseIndex> {
        self.selections.iter().map(|s| &s.index)
    }

    pub fn len(&self) -> usize {
        self.selections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }

    /// Number of layers where two components had exactly equal norms.
    pub fn ties(&self) -> usize {
        self.selections.iter().filter(|s| s.tied).count()
    }
}

/// Output of a forward pass together with the encoder state it visited.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub output: Tensor,
    pub trace: IndexTrace,
    /// `s_e` at every scale `0..=L` (the skip features, then the bottleneck).
    pub encoder_features: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    encoders: Vec<Block>,
    upsamplers: Vec<ConvKernel>,
    decoders: Vec<Block>,
    head: ConvKernel,
}

/// Builds a network with weights drawn deterministically from `cfg.seed`.
pub fn build(cfg: &NetworkConfig) -> Result<Network> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ext = cfg.kernel_extent();
    let c = &cfg.channels;
    let encoders = (0..=cfg.scales)
        .map(|l| {
            let spec = BlockSpec {
                in_channels: if l == 0 { cfg.in_channels } else { c[l - 1] },
                widths: vec![c[l], c[l]],
                kernel: ext,
            };
            Block::random(&spec, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let upsamplers = (0..cfg.scales)
        .map(|l| ConvKernel::random(c[l], c[l + 1], ext, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let decoders = (0..cfg.scales)
        .map(|l| {
            let spec = BlockSpec {
                in_channels: 2 * c[l],
                widths: vec![c[l], c[l]],
                kernel: ext,
            };
            Block::random(&spec, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let head = ConvKernel::random(cfg.out_channels, c[0], (1, 1), &mut rng)?;
    Ok(Network {
        config: cfg.clone(),
        encoders,
        upsamplers,
        decoders,
        head,
    })
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn variant(&self) -> SamplingVariant {
        self.config.variant
    }

    pub fn encoders(&self) -> &[Block] {
        &self.encoders
    }

    pub fn decoders(&self) -> &[Block] {
        &self.decoders
    }

    /// Same weights with a different sampling scheme. Kernel shapes do not
    /// depend on the variant.
    pub fn with_variant(mut self, variant: SamplingVariant) -> Self {
        self.config.variant = variant;
        self
    }

    /// Replaces the encoder and decoder blocks, e.g. to insert extra
    /// nonlinearities. Channel counts must still chain.
    pub fn with_blocks(mut self, encoders: Vec<Block>, decoders: Vec<Block>) -> Result<Self> {
        if encoders.len() != self.encoders.len() || decoders.len() != self.decoders.len() {
            return Err(Error::InvalidConfig(
                "block count does not match scales".into(),
            ));
        }
        self.encoders = encoders;
        self.decoders = decoders;
        Ok(self)
    }

    /// All kernels in storage order: encoders, upsamplers, decoders, head.
    pub fn kernels(&self) -> impl Iterator<Item = &ConvKernel> {
        self.encoders
            .iter()
            .flat_map(Block::kernels)
            .chain(&self.upsamplers)
            .chain(self.decoders.iter().flat_map(Block::kernels))
            .chain(std::iter::once(&self.head))
    }

    fn kernels_mut(&mut self) -> Vec<&mut ConvKernel> {
        let mut out: Vec<&mut ConvKernel> = Vec::new();
        for b in &mut self.encoders {
            out.extend(b.kernels_mut());
        }
        out.extend(self.upsamplers.iter_mut());
        for b in &mut self.decoders {
            out.extend(b.kernels_mut());
        }
        out.push(&mut self.head);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.kernels().map(ConvKernel::parameter_count).sum()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let cfg = &self.config;
        if x.spatial_rank() != cfg.spatial_rank {
            return Err(Error::SpatialRankMismatch {
                expected: cfg.spatial_rank,
                got: x.spatial_rank(),
            });
        }
        if x.channels() != cfg.in_channels {
            return Err(Error::ChannelMismatch {
                expected: cfg.in_channels,
                got: x.channels(),
            });
        }
        let m = cfg.extent_multiple();
        for &extent in x.spatial() {
            if extent % m != 0 {
                return Err(Error::NotDivisible { extent, divisor: m });
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, IndexTrace)> {
        let pass = self.forward_detailed(x)?;
        Ok((pass.output, pass.trace))
    }

    pub fn forward_detailed(&self, x: &Tensor) -> Result<ForwardPass> {
        self.check_input(x)?;
        let cfg = &self.config;
        let mut trace = IndexTrace::default();
        let mut skips = Vec::with_capacity(cfg.scales + 1);
        let mut cur = x.clone();
        for l in 0..cfg.scales {
            let s = self.encoders[l].forward(&cur)?;
            let (pooled, selection) = strided_pool_detailed(&s, cfg.variant, cfg.p)?;
            trace.selections.extend(selection);
            skips.push(s);
            cur = pooled;
        }
        let bottom = self.encoders[cfg.scales].forward(&cur)?;
        skips.push(bottom.clone());
        let mut up = bottom;
        for l in (0..cfg.scales).rev() {
            let index = trace.selections.get(l).map(|s| &s.index);
            let s_d = upsample_block(&up, cfg.variant, index, &self.upsamplers[l])?;
            let merged = Tensor::concat_channels(&[&skips[l], &s_d])?;
            up = self.decoders[l].forward(&merged)?;
        }
        let output = conv2d_circular(&up, &self.head)?;
        Ok(ForwardPass {
            output,
            trace,
            encoder_features: skips,
        })
    }

    /// Writes the `key=value` config header, a blank line, then the `APSW`
    /// weight container.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{NETWORK_HEADER}")?;
        write!(w, "{}", self.config)?;
        writeln!(w)?;
        nn::write_kernels(&mut w, self.kernels())
    }

    pub fn load<R: BufRead>(mut r: R) -> Result<Self> {
        let mut first = String::new();
        r.read_line(&mut first)?;
        if first.trim_end() != NETWORK_HEADER {
            return Err(Error::format("missing network header"));
        }
        let mut header = String::new();
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::format("truncated network header"));
            }
            if line.trim().is_empty() {
                break;
            }
            header.push_str(&line);
        }
        let cfg = NetworkConfig::parse(&header)?;
        let mut net = build(&cfg)?;
        let loaded = nn::read_kernels(r)?;
        let mut slots = net.kernels_mut();
        if loaded.len() != slots.len() {
            return Err(Error::format(format!(
                "config implies {} kernels, container has {}",
                slots.len(),
                loaded.len()
            )));
        }
        for (slot, k) in slots.iter_mut().zip(loaded) {
            if slot.extent() != k.extent()
                || slot.in_channels() != k.in_channels()
                || slot.out_channels() != k.out_channels()
            {
                return Err(Error::format("kernel shape does not match config"));
            }
            **slot = k;
        }
        Ok(net)
    }
}

const NETWORK_HEADER: &str = "polyeq-network v1";

/// Outcome of comparing the index trace of a shifted pass against the trace
/// predicted from the unshifted pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleCheck {
    pub scale: usize,
    /// Shift of the pooled input at this scale relative to the unshifted pass.
    pub effective_shift: Shift,
    pub original: PolyphaseIndex,
    pub expected: PolyphaseIndex,
    pub observed: PolyphaseIndex,
    /// Either pass had exactly tied norms at this scale.
    pub tied: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlipReport {
    pub shift: Shift,
    pub scales: Vec<ScaleCheck>,
}

impl FlipReport {
    pub fn all_pass(&self) -> bool {
        self.scales.iter().all(|s| s.pass)
    }
}

/// Next-scale shift after adaptive downsampling with selected phase `i`:
/// `k/2` for even `k`, `(k + 2i - 1)/2` for odd `k`.
pub fn next_scale_shift(k: i64, i: usize) -> i64 {
    if k % 2 == 0 {
        k / 2
    } else {
        (k + 2 * i as i64 - 1) / 2
    }
}

/// Phase the shifted pass should select: unchanged for even shifts, flipped
/// for odd ones, per axis.
pub fn predicted_phase(k: i64, i: usize) -> usize {
    (i + k.rem_euclid(2) as usize) % 2
}

/// Checks, scale by scale, that shifting the input by `k` flips or keeps each
/// recorded polyphase index as the effective-shift recursion predicts.
pub fn index_trace_flip_check(net: &Network, x: &Tensor, k: &Shift) -> Result<FlipReport> {
    if !net.variant().is_adaptive() {
        return Err(Error::NotAdaptive);
    }
    let (_, base) = net.forward(x)?;
    let (_, shifted) = net.forward(&x.circular_shift(k)?)?;
    let mut effective = k.offsets().to_vec();
    let mut scales = Vec::with_capacity(base.len());
    for (scale, (orig, seen)) in base.selections.iter().zip(&shifted.selections).enumerate() {
        let phases = orig.index.phase();
        let expected = PolyphaseIndex::new(
            effective
                .iter()
                .zip(phases)
                .map(|(&k, &i)| predicted_phase(k, i))
                .collect(),
        )?;
        scales.push(ScaleCheck {
            scale,
            effective_shift: Shift::new(effective.clone()),
            original: orig.index.clone(),
            pass: expected == seen.index,
            expected,
            observed: seen.index.clone(),
            tied: orig.tied || seen.tied,
        });
        effective = effective
            .iter()
            .zip(phases)
            .map(|(&k, &i)| next_scale_shift(k, i))
            .collect();
    }
    Ok(FlipReport {
        shift: k.clone(),
        scales,
    })
}
