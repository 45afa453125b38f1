//! Network definitions: texture extractor, generator, critic and the frozen
//! perceptual extractor. Every forward is generic over the element type so
//! the same code serves `f64` training and `f32` inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semsr_tensorad::nn::{self, kaiming_uniform, LEAKY_SLOPE};
use semsr_tensorad::{Bound, Element, Graph, ParamSet, Tensor, Var};

use super::attention::{attend, transfer};
use super::config::ModelConfig;
use crate::error::Result;
use crate::imagecore::{resize_plane, ResampleKernel};

/// Feature maps at the three texture-extractor taps, finest first.
pub type Levels = [Var; 3];

fn conv_param(
    p: &mut ParamSet,
    name: &str,
    out: usize,
    inp: usize,
    rng: &mut ChaCha8Rng,
    gain: f64,
) {
    let w = kaiming_uniform(&[out, inp, 3, 3], inp * 9, LEAKY_SLOPE, rng).map(|v| v * gain);
    p.insert(format!("{name}.w"), w);
    p.insert(format!("{name}.b"), Tensor::zeros(&[out]));
}

/// Texture extractor and generator parameters (`lte.*`, `gen.*`).
pub fn init_generator(cfg: &ModelConfig) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let mut p = ParamSet::new();
    let [c1, c2, c3] = cfg.lte_widths;
    conv_param(&mut p, "lte.conv1", c1, 3, &mut rng, 1.0);
    conv_param(&mut p, "lte.conv2", c1, c1, &mut rng, 1.0);
    conv_param(&mut p, "lte.conv3", c2, c1, &mut rng, 1.0);
    conv_param(&mut p, "lte.conv4", c2, c2, &mut rng, 1.0);
    conv_param(&mut p, "lte.conv5", c3, c2, &mut rng, 1.0);

    let f = cfg.features;
    conv_param(&mut p, "gen.head", f, 3, &mut rng, 1.0);
    for i in 0..cfg.res_blocks {
        conv_param(&mut p, &format!("gen.res{i}.c1"), f, f, &mut rng, 1.0);
        conv_param(&mut p, &format!("gen.res{i}.c2"), f, f, &mut rng, 0.1);
    }
    conv_param(&mut p, "gen.body", f, f, &mut rng, 1.0);
    conv_param(&mut p, "gen.fuse3", f, f + c3, &mut rng, 1.0);
    conv_param(&mut p, "gen.up1", 4 * f, f, &mut rng, 1.0);
    conv_param(&mut p, "gen.fuse2", f, f + c2, &mut rng, 1.0);
    conv_param(&mut p, "gen.up2", 2 * f, f, &mut rng, 1.0);
    conv_param(&mut p, "gen.fuse1", f / 2, f / 2 + c1, &mut rng, 1.0);
    conv_param(&mut p, "gen.tail", 3, f / 2, &mut rng, 1.0);
    p
}

/// Critic parameters (`disc.*`): five stride-2 convolutions and a dense
/// layer to one score.
pub fn init_critic(cfg: &ModelConfig) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed ^ 0xd15c);
    let mut p = ParamSet::new();
    let c = cfg.critic_width;
    let widths = [3, c, 2 * c, 2 * c, 4 * c, 4 * c];
    for i in 0..5 {
        conv_param(
            &mut p,
            &format!("disc.c{}", i + 1),
            widths[i + 1],
            widths[i],
            &mut rng,
            1.0,
        );
    }
    let side = cfg.hr_patch / 32;
    let d = 4 * c * side * side;
    p.insert("disc.fc.w", kaiming_uniform(&[d, 1], d, 1.0, &mut rng));
    p.insert("disc.fc.b", Tensor::zeros(&[1, 1]));
    p
}

/// Frozen perceptual extractor (`per.*`), seeded and never trained.
pub fn init_perceptual(cfg: &ModelConfig) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed ^ 0x9e7c);
    let mut p = ParamSet::new();
    let [a, b] = cfg.perceptual_widths;
    let widths = [3, a, a, b, b, b];
    for i in 0..5 {
        conv_param(
            &mut p,
            &format!("per.c{}", i + 1),
            widths[i + 1],
            widths[i],
            &mut rng,
            1.0,
        );
    }
    p
}

fn conv<T: Element>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    Ok(nn::conv2d(g, x, w, Some(b), stride, 1)?)
}

fn conv_leaky<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    name: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let y = conv(g, p, name, x, stride)?;
    Ok(g.leaky_relu(y, LEAKY_SLOPE))
}

/// Taps after conv1, conv3 and conv5.
pub fn lte_forward<T: Element>(g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Levels> {
    let l1 = conv_leaky(g, p, "lte.conv1", x, 1)?;
    let h = conv_leaky(g, p, "lte.conv2", l1, 2)?;
    let l2 = conv_leaky(g, p, "lte.conv3", h, 1)?;
    let h = conv_leaky(g, p, "lte.conv4", l2, 2)?;
    let l3 = conv_leaky(g, p, "lte.conv5", h, 1)?;
    Ok([l1, l2, l3])
}

/// Transferred textures (finest first) and the soft-attention map at LR
/// resolution `[n, 1, h, w]`.
#[derive(Debug, Clone, Copy)]
pub struct TextureInput {
    pub t: Levels,
    pub s: Var,
}

/// `x + conv(concat(x, t)) ⊙ s`.
fn fuse<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    name: &str,
    x: Var,
    t: Var,
    s: Var,
) -> Result<Var> {
    let c = g.shape(x)[1];
    let cat = g.concat(&[x, t], 1)?;
    let f = conv(g, p, name, cat, 1)?;
    let gate = nn::broadcast_channels(g, s, c)?;
    let gated = g.mul(f, gate)?;
    Ok(g.add(x, gated)?)
}

/// LR `[n, 3, h, w]` to SR `[n, 3, 4h, 4w]`. `lr_up` is the bicubic
/// upsampling of `lr`, added as a global skip. With `tex = None` the texture
/// branches are skipped entirely.
pub fn generator_forward<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    lr: Var,
    lr_up: Var,
    tex: Option<&TextureInput>,
    res_blocks: usize,
) -> Result<Var> {
    let head = conv(g, p, "gen.head", lr, 1)?;
    let mut x = head;
    for i in 0..res_blocks {
        let h = conv(g, p, &format!("gen.res{i}.c1"), x, 1)?;
        let h = g.relu(h);
        let h = conv(g, p, &format!("gen.res{i}.c2"), h, 1)?;
        x = g.add(x, h)?;
    }
    let body = conv(g, p, "gen.body", x, 1)?;
    let mut x = g.add(body, head)?;

    let s_maps = match tex {
        Some(t) => {
            let s2 = nn::upsample_nearest(g, t.s, 2)?;
            let s1 = nn::upsample_nearest(g, t.s, 4)?;
            Some([s1, s2, t.s])
        }
        None => None,
    };
    if let (Some(t), Some(s)) = (tex, s_maps) {
        x = fuse(g, p, "gen.fuse3", x, t.t[2], s[2])?;
    }
    let up = conv_leaky(g, p, "gen.up1", x, 1)?;
    x = g.pixel_shuffle(up, 2)?;
    if let (Some(t), Some(s)) = (tex, s_maps) {
        x = fuse(g, p, "gen.fuse2", x, t.t[1], s[1])?;
    }
    let up = conv_leaky(g, p, "gen.up2", x, 1)?;
    x = g.pixel_shuffle(up, 2)?;
    if let (Some(t), Some(s)) = (tex, s_maps) {
        x = fuse(g, p, "gen.fuse1", x, t.t[0], s[0])?;
    }
    let out = conv(g, p, "gen.tail", x, 1)?;
    Ok(g.add(out, lr_up)?)
}

/// Tape handles of a full forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub sr: Var,
    pub tex: TextureInput,
}

/// Attention of the upsampled LR against the degraded reference, texture
/// transfer from the undegraded reference at all three levels, and the
/// generator.
pub fn ttsr_forward<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    lr: Var,
    lr_up: Var,
    ref_hr: Var,
    ref_degraded: Var,
    res_blocks: usize,
) -> Result<Forward> {
    let [_, _, h, w] = g.value(lr).dims4("ttsr_forward")?;
    let q = lte_forward(g, p, lr_up)?;
    let k = lte_forward(g, p, ref_degraded)?;
    let v = lte_forward(g, p, ref_hr)?;
    let att = attend(g, q[2], k[2])?;
    let t3 = transfer(g, v[2], &att, 1, (h, w))?;
    let t2 = transfer(g, v[1], &att, 2, (h, w))?;
    let t1 = transfer(g, v[0], &att, 4, (h, w))?;
    let tex = TextureInput {
        t: [t1, t2, t3],
        s: att.s,
    };
    let sr = generator_forward(g, p, lr, lr_up, Some(&tex), res_blocks)?;
    Ok(Forward { sr, tex })
}

/// Per-sample critic scores `[n, 1]`.
pub fn critic_forward<T: Element>(g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 1..=5 {
        h = conv_leaky(g, p, &format!("disc.c{i}"), h, 2)?;
    }
    let shape = g.shape(h).to_vec();
    let flat = g.reshape(h, &[shape[0], shape[1..].iter().product()])?;
    let y = g.matmul(flat, p.var("disc.fc.w")?)?;
    let b = g.expand(p.var("disc.fc.b")?, &[shape[0], 1])?;
    Ok(g.add(y, b)?)
}

/// Deep features of the frozen extractor at 1/4 resolution.
pub fn perceptual_forward<T: Element>(g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
    let strides = [1, 2, 1, 2, 1];
    let mut h = x;
    for (i, s) in strides.iter().enumerate() {
        let y = conv(g, p, &format!("per.c{}", i + 1), h, *s)?;
        h = g.relu(y);
    }
    Ok(h)
}

/// Bicubic upsampling of every plane of an `[n, c, h, w]` tensor, without
/// clamping.
pub fn upsample_bicubic(t: &Tensor<f64>, r: usize) -> Result<Tensor<f64>> {
    let [n, c, h, w] = t.dims4("upsample_bicubic")?;
    let k = ResampleKernel::bicubic();
    let mut out = Vec::with_capacity(n * c * h * w * r * r);
    for plane in t.data().chunks(h * w) {
        out.extend(resize_plane(plane, w, h, w * r, h * r, &k));
    }
    Ok(Tensor::new(&[n, c, h * r, w * r], out)?)
}
