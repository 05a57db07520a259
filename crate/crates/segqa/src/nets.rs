//! Network builders: the residual 3D U-Net denoiser and the two
//! variational autoencoders.
//!
//! Residual block internals: conv(3^3) -> instance norm -> PReLU, repeated
//! `num_res_units` times (the first conv carries the block stride), with an
//! additive skip that becomes a strided 1x1x1 conv when channels or stride
//! differ. U-Net skip connections concatenate channels; upsampling is a
//! transposed conv with output padding `stride - 1`, which exactly inverts
//! the stride-s shape map. A final 1x1x1 conv produces out_channels logits.
//!
//! Builders come in two stages: [`plan_network`] lists every parameter
//! name and shape (structural validation and parameter counting without
//! allocating), and the `build_*` functions materialize an initialized
//! [`ParamStore`].

use crate::error::{Error, Result};
use crate::neural::{
    adam_step, AdamConfig, NodeId, ParamId, ParamStore, Scalar, Tape, Tensor, DICE_SMOOTH,
    INSTANCE_NORM_EPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Dae,
    VaeSingle,
    VaeMulti,
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NetworkKind::Dae => write!(f, "dae"),
            NetworkKind::VaeSingle => write!(f, "vae_single"),
            NetworkKind::VaeMulti => write!(f, "vae_multi"),
        }
    }
}

/// Architecture description: channel ladder, per-level strides, residual
/// unit count, and latent head size for the VAE kinds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    #[serde(default)]
    pub num_res_units: usize,
    #[serde(default)]
    pub latent_size: usize,
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
}

fn default_kl_weight() -> f64 {
    1e-3
}

impl NetworkSpec {
    /// The U-Net pairs `len(channels)-1` strides with its down blocks; the
    /// VAE encoder strides every conv, so it takes one stride per channel.
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!(
                "channels must be nonempty and positive, got {:?}",
                self.channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("need in/out channels >= 1".into()));
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("strides must be positive".into()));
        }
        let expected = match self.kind {
            NetworkKind::Dae => self.channels.len() - 1,
            NetworkKind::VaeSingle | NetworkKind::VaeMulti => self.channels.len(),
        };
        if self.strides.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{} expects {} strides for {} channels, got {}",
                self.kind,
                expected,
                self.channels.len(),
                self.strides.len()
            )));
        }
        if matches!(self.kind, NetworkKind::VaeSingle | NetworkKind::VaeMulti)
            && self.latent_size == 0
        {
            return Err(Error::InvalidArgument("VAE needs latent_size >= 1".into()));
        }
        if self.kl_weight < 0.0 {
            return Err(Error::InvalidArgument("kl_weight must be >= 0".into()));
        }
        Ok(())
    }

    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }
}

fn check_divisible(dims: (usize, usize, usize), product: usize) -> Result<()> {
    for d in [dims.0, dims.1, dims.2] {
        if d % product != 0 {
            return Err(Error::InvalidArgument(format!(
                "input dims {dims:?} not divisible by total stride {product}"
            )));
        }
    }
    Ok(())
}

/// Parameter plan: every tensor name and shape in creation order.
pub fn plan_network(
    spec: &NetworkSpec,
    input_dims: (usize, usize, usize),
) -> Result<Vec<(String, Vec<usize>)>> {
    spec.validate()?;
    check_divisible(input_dims, spec.stride_product())?;
    let mut plan = Vec::new();
    match spec.kind {
        NetworkKind::Dae => plan_unet(spec, &mut plan),
        NetworkKind::VaeSingle | NetworkKind::VaeMulti => plan_vae(spec, input_dims, &mut plan),
    }
    Ok(plan)
}

/// Total learnable value count of a spec at the given input dims.
pub fn parameter_count(spec: &NetworkSpec, input_dims: (usize, usize, usize)) -> Result<usize> {
    Ok(plan_network(spec, input_dims)?
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum())
}

fn plan_res_block(
    prefix: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    subunits: usize,
    plan: &mut Vec<(String, Vec<usize>)>,
) {
    if subunits == 0 {
        plan.push((format!("{prefix}.conv.w"), vec![cout, cin, 3, 3, 3]));
        plan.push((format!("{prefix}.conv.b"), vec![cout]));
        plan.push((format!("{prefix}.norm.gamma"), vec![cout]));
        plan.push((format!("{prefix}.norm.beta"), vec![cout]));
        plan.push((format!("{prefix}.act.alpha"), vec![1]));
        return;
    }
    let mut c = cin;
    for u in 0..subunits {
        plan.push((format!("{prefix}.unit{u}.conv.w"), vec![cout, c, 3, 3, 3]));
        plan.push((format!("{prefix}.unit{u}.conv.b"), vec![cout]));
        plan.push((format!("{prefix}.unit{u}.norm.gamma"), vec![cout]));
        plan.push((format!("{prefix}.unit{u}.norm.beta"), vec![cout]));
        plan.push((format!("{prefix}.unit{u}.act.alpha"), vec![1]));
        c = cout;
    }
    if cin != cout || stride != 1 {
        plan.push((format!("{prefix}.skip.w"), vec![cout, cin, 1, 1, 1]));
        plan.push((format!("{prefix}.skip.b"), vec![cout]));
    }
}

fn plan_unet(spec: &NetworkSpec, plan: &mut Vec<(String, Vec<usize>)>) {
    let levels = spec.channels.len();
    let mut cin = spec.in_channels;
    for i in 0..levels {
        let stride = if i < levels - 1 { spec.strides[i] } else { 1 };
        let name = if i < levels - 1 {
            format!("enc{i}")
        } else {
            "bottom".to_string()
        };
        plan_res_block(&name, cin, spec.channels[i], stride, spec.num_res_units, plan);
        cin = spec.channels[i];
    }
    for i in (0..levels - 1).rev() {
        // the decoder consumes the concatenation of the level skip and the
        // coarser feature map
        let coarser = if i == levels - 2 {
            spec.channels[levels - 1]
        } else {
            spec.channels[i + 1]
        };
        let in_c = spec.channels[i] + coarser;
        let out_c = spec.channels[i];
        plan.push((format!("up{i}.tconv.w"), vec![in_c, out_c, 3, 3, 3]));
        plan.push((format!("up{i}.tconv.b"), vec![out_c]));
        plan.push((format!("up{i}.norm.gamma"), vec![out_c]));
        plan.push((format!("up{i}.norm.beta"), vec![out_c]));
        plan.push((format!("up{i}.act.alpha"), vec![1]));
        if spec.num_res_units > 0 {
            plan_res_block(&format!("up{i}.res"), out_c, out_c, 1, spec.num_res_units, plan);
        }
    }
    plan.push((
        "final.w".to_string(),
        vec![spec.out_channels, spec.channels[0], 1, 1, 1],
    ));
    plan.push(("final.b".to_string(), vec![spec.out_channels]));
}

fn vae_bottleneck(spec: &NetworkSpec, input_dims: (usize, usize, usize)) -> (usize, usize) {
    let p = spec.stride_product();
    let spatial = (input_dims.0 / p) * (input_dims.1 / p) * (input_dims.2 / p);
    (*spec.channels.last().expect("nonempty channels"), spatial)
}

fn plan_vae(
    spec: &NetworkSpec,
    input_dims: (usize, usize, usize),
    plan: &mut Vec<(String, Vec<usize>)>,
) {
    let levels = spec.channels.len();
    let mut cin = spec.in_channels;
    for i in 0..levels {
        plan.push((format!("enc{i}.conv.w"), vec![spec.channels[i], cin, 3, 3, 3]));
        plan.push((format!("enc{i}.conv.b"), vec![spec.channels[i]]));
        plan.push((format!("enc{i}.norm.gamma"), vec![spec.channels[i]]));
        plan.push((format!("enc{i}.norm.beta"), vec![spec.channels[i]]));
        plan.push((format!("enc{i}.act.alpha"), vec![1]));
        cin = spec.channels[i];
    }
    let (bc, bs) = vae_bottleneck(spec, input_dims);
    let flat = bc * bs;
    plan.push(("latent.mean.w".to_string(), vec![spec.latent_size, flat]));
    plan.push(("latent.mean.b".to_string(), vec![spec.latent_size]));
    plan.push(("latent.logvar.w".to_string(), vec![spec.latent_size, flat]));
    plan.push(("latent.logvar.b".to_string(), vec![spec.latent_size]));
    plan.push(("latent.decode.w".to_string(), vec![flat, spec.latent_size]));
    plan.push(("latent.decode.b".to_string(), vec![flat]));
    for i in (1..levels).rev() {
        plan.push((
            format!("dec{i}.tconv.w"),
            vec![spec.channels[i], spec.channels[i - 1], 3, 3, 3],
        ));
        plan.push((format!("dec{i}.tconv.b"), vec![spec.channels[i - 1]]));
        plan.push((format!("dec{i}.norm.gamma"), vec![spec.channels[i - 1]]));
        plan.push((format!("dec{i}.norm.beta"), vec![spec.channels[i - 1]]));
        plan.push((format!("dec{i}.act.alpha"), vec![1]));
    }
    plan.push((
        "dec0.tconv.w".to_string(),
        vec![spec.channels[0], spec.out_channels, 3, 3, 3],
    ));
    plan.push(("dec0.tconv.b".to_string(), vec![spec.out_channels]));
}

fn weight_fan_in(name: &str, shape: &[usize]) -> usize {
    match shape.len() {
        // transposed-conv weights store input channels first
        5 if name.contains("tconv") => shape[0] * shape[2] * shape[3] * shape[4],
        5 => shape[1] * shape[2] * shape[3] * shape[4],
        2 => shape[1],
        _ => shape.iter().product(),
    }
}

/// Materializes a plan into an initialized store. Weights and biases draw
/// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); norm scale/shift start at 1/0;
/// rectifier slopes start at 0.25. Draw order equals plan order, so a seed
/// pins every value.
fn materialize<T: Scalar>(plan: &[(String, Vec<usize>)], seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in plan {
        let n: usize = shape.iter().product();
        let tensor = if name.ends_with(".norm.gamma") {
            Tensor::from_vec(shape, vec![T::one(); n])
        } else if name.ends_with(".norm.beta") {
            Tensor::zeros(shape)
        } else if name.ends_with(".act.alpha") {
            Tensor::from_vec(shape, vec![T::from_f64(0.25); n])
        } else {
            let fan_in = if name.ends_with(".b") {
                let weight_name = format!("{}.w", name.strip_suffix(".b").expect("bias name"));
                plan.iter()
                    .find(|(n, _)| *n == weight_name)
                    .map(|(n, s)| weight_fan_in(n, s))
                    .unwrap_or(n.max(1))
            } else {
                weight_fan_in(name, shape)
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_vec(
                shape,
                (0..n)
                    .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                    .collect(),
            )
        };
        store.add(name.clone(), tensor);
    }
    store
}

struct ResBlockIds {
    /// (conv w, conv b, norm gamma, norm beta, act alpha) per subunit
    units: Vec<(ParamId, ParamId, ParamId, ParamId, ParamId)>,
    skip: Option<(ParamId, ParamId)>,
    stride: usize,
    residual: bool,
}

impl ResBlockIds {
    fn resolve<T: Scalar>(
        store: &ParamStore<T>,
        prefix: &str,
        subunits: usize,
        stride: usize,
    ) -> Self {
        let find = |suffix: &str| store.find(&format!("{prefix}.{suffix}"));
        if subunits == 0 {
            let unit = (
                find("conv.w").expect("plan"),
                find("conv.b").expect("plan"),
                find("norm.gamma").expect("plan"),
                find("norm.beta").expect("plan"),
                find("act.alpha").expect("plan"),
            );
            return Self {
                units: vec![unit],
                skip: None,
                stride,
                residual: false,
            };
        }
        let units = (0..subunits)
            .map(|u| {
                let f = |suffix: &str| {
                    store
                        .find(&format!("{prefix}.unit{u}.{suffix}"))
                        .expect("plan")
                };
                (
                    f("conv.w"),
                    f("conv.b"),
                    f("norm.gamma"),
                    f("norm.beta"),
                    f("act.alpha"),
                )
            })
            .collect();
        let skip = find("skip.w").map(|w| (w, find("skip.b").expect("plan")));
        Self {
            units,
            skip,
            stride,
            residual: true,
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId) -> NodeId {
        let mut cur = x;
        for (i, &(w, b, gamma, beta, alpha)) in self.units.iter().enumerate() {
            let stride = if i == 0 { self.stride } else { 1 };
            let wi = tape.param(store, w);
            let bi = tape.param(store, b);
            cur = tape.conv3d(cur, wi, bi, stride, 1);
            let gi = tape.param(store, gamma);
            let be = tape.param(store, beta);
            cur = tape.instance_norm(cur, gi, be, INSTANCE_NORM_EPS);
            let al = tape.param(store, alpha);
            cur = tape.prelu(cur, al);
        }
        if !self.residual {
            return cur;
        }
        let skip = match self.skip {
            Some((w, b)) => {
                let wi = tape.param(store, w);
                let bi = tape.param(store, b);
                tape.conv3d(x, wi, bi, self.stride, 0)
            }
            None => x,
        };
        tape.add(cur, skip)
    }
}

/// Residual 3D U-Net with concatenating skip connections.
pub struct UNet<T> {
    pub spec: NetworkSpec,
    pub params: ParamStore<T>,
    pub input_dims: (usize, usize, usize),
    enc: Vec<ResBlockIds>,
    ups: Vec<UpBlockIds>,
    final_conv: (ParamId, ParamId),
}

struct UpBlockIds {
    tconv: (ParamId, ParamId),
    norm: (ParamId, ParamId),
    alpha: ParamId,
    res: Option<ResBlockIds>,
    stride: usize,
}

/// Builds the residual U-Net denoiser for inputs of the given voxel dims.
pub fn build_unet<T: Scalar>(
    spec: &NetworkSpec,
    input_dims: (usize, usize, usize),
    init_seed: u64,
) -> Result<UNet<T>> {
    if spec.kind != NetworkKind::Dae {
        return Err(Error::InvalidArgument(format!(
            "build_unet expects a dae spec, got {}",
            spec.kind
        )));
    }
    let plan = plan_network(spec, input_dims)?;
    let params: ParamStore<T> = materialize(&plan, init_seed);

    let levels = spec.channels.len();
    let enc = (0..levels)
        .map(|i| {
            let stride = if i < levels - 1 { spec.strides[i] } else { 1 };
            let name = if i < levels - 1 {
                format!("enc{i}")
            } else {
                "bottom".to_string()
            };
            ResBlockIds::resolve(&params, &name, spec.num_res_units, stride)
        })
        .collect();
    let ups = (0..levels - 1)
        .rev()
        .map(|i| UpBlockIds {
            tconv: (
                params.find(&format!("up{i}.tconv.w")).expect("plan"),
                params.find(&format!("up{i}.tconv.b")).expect("plan"),
            ),
            norm: (
                params.find(&format!("up{i}.norm.gamma")).expect("plan"),
                params.find(&format!("up{i}.norm.beta")).expect("plan"),
            ),
            alpha: params.find(&format!("up{i}.act.alpha")).expect("plan"),
            res: (spec.num_res_units > 0).then(|| {
                ResBlockIds::resolve(&params, &format!("up{i}.res"), spec.num_res_units, 1)
            }),
            stride: spec.strides[i],
        })
        .collect();
    let final_conv = (
        params.find("final.w").expect("plan"),
        params.find("final.b").expect("plan"),
    );
    Ok(UNet {
        spec: spec.clone(),
        params,
        input_dims,
        enc,
        ups,
        final_conv,
    })
}

impl<T: Scalar> UNet<T> {
    /// Forward pass to logits using the model's own parameters.
    pub fn forward(&self, tape: &mut Tape<T>, input: NodeId) -> NodeId {
        self.forward_with(&self.params, tape, input)
    }

    /// Forward pass against an external parameter store with the same
    /// layout (used by the finite-difference harness).
    pub fn forward_with(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        input: NodeId,
    ) -> NodeId {
        let levels = self.enc.len();
        let mut skips = Vec::with_capacity(levels - 1);
        let mut cur = input;
        for (i, block) in self.enc.iter().enumerate() {
            cur = block.forward(tape, params, cur);
            if i < levels - 1 {
                skips.push(cur);
            }
        }
        for (idx, up) in self.ups.iter().enumerate() {
            let skip = skips[levels - 2 - idx];
            cur = tape.concat_channels(skip, cur);
            let wi = tape.param(params, up.tconv.0);
            let bi = tape.param(params, up.tconv.1);
            cur = tape.conv_transpose3d(cur, wi, bi, up.stride, 1, up.stride - 1);
            let gi = tape.param(params, up.norm.0);
            let be = tape.param(params, up.norm.1);
            cur = tape.instance_norm(cur, gi, be, INSTANCE_NORM_EPS);
            let al = tape.param(params, up.alpha);
            cur = tape.prelu(cur, al);
            if let Some(res) = &up.res {
                cur = res.forward(tape, params, cur);
            }
        }
        let wi = tape.param(params, self.final_conv.0);
        let bi = tape.param(params, self.final_conv.1);
        tape.conv3d(cur, wi, bi, 1, 0)
    }
}

/// Convolutional VAE: strided encoder, dense mean/log-variance heads,
/// reparameterized sample, dense decode and mirrored transposed convs.
pub struct Vae<T> {
    pub spec: NetworkSpec,
    pub params: ParamStore<T>,
    pub input_dims: (usize, usize, usize),
    enc: Vec<(ParamId, ParamId, ParamId, ParamId, ParamId)>,
    fc_mean: (ParamId, ParamId),
    fc_logvar: (ParamId, ParamId),
    fc_decode: (ParamId, ParamId),
    dec: Vec<(ParamId, ParamId, ParamId, ParamId, ParamId, usize)>,
    dec_final: (ParamId, ParamId, usize),
    bottleneck: (usize, (usize, usize, usize)),
}

/// Builds a VAE for inputs of the given voxel dims.
pub fn build_vae<T: Scalar>(
    spec: &NetworkSpec,
    input_dims: (usize, usize, usize),
    init_seed: u64,
) -> Result<Vae<T>> {
    if spec.kind == NetworkKind::Dae {
        return Err(Error::InvalidArgument(
            "build_vae expects a vae_single or vae_multi spec".into(),
        ));
    }
    let plan = plan_network(spec, input_dims)?;
    let params: ParamStore<T> = materialize(&plan, init_seed);
    let levels = spec.channels.len();
    let enc = (0..levels)
        .map(|i| {
            let f = |s: &str| params.find(&format!("enc{i}.{s}")).expect("plan");
            (
                f("conv.w"),
                f("conv.b"),
                f("norm.gamma"),
                f("norm.beta"),
                f("act.alpha"),
            )
        })
        .collect();
    let f = |s: &str| params.find(s).expect("plan");
    let dec = (1..levels)
        .rev()
        .map(|i| {
            let g = |s: &str| params.find(&format!("dec{i}.{s}")).expect("plan");
            (
                g("tconv.w"),
                g("tconv.b"),
                g("norm.gamma"),
                g("norm.beta"),
                g("act.alpha"),
                spec.strides[i],
            )
        })
        .collect();
    let p = spec.stride_product();
    let bottleneck = (
        *spec.channels.last().expect("nonempty"),
        (input_dims.0 / p, input_dims.1 / p, input_dims.2 / p),
    );
    let fc_mean = (f("latent.mean.w"), f("latent.mean.b"));
    let fc_logvar = (f("latent.logvar.w"), f("latent.logvar.b"));
    let fc_decode = (f("latent.decode.w"), f("latent.decode.b"));
    let dec_final = (f("dec0.tconv.w"), f("dec0.tconv.b"), spec.strides[0]);
    Ok(Vae {
        spec: spec.clone(),
        params,
        input_dims,
        enc,
        fc_mean,
        fc_logvar,
        fc_decode,
        dec,
        dec_final,
        bottleneck,
    })
}

impl<T: Scalar> Vae<T> {
    /// Forward to (logits, mean, logvar). `eps` is the standard-normal draw
    /// of the reparameterization, shape [N, latent_size]; `None` uses the
    /// mean latent (deterministic pathway).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: NodeId,
        eps: Option<Tensor<T>>,
    ) -> (NodeId, NodeId, NodeId) {
        self.forward_with(&self.params, tape, input, eps)
    }

    pub fn forward_with(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        input: NodeId,
        eps: Option<Tensor<T>>,
    ) -> (NodeId, NodeId, NodeId) {
        let n_batch = tape.value(input).shape()[0];
        let mut cur = input;
        for (i, &(w, b, gamma, beta, alpha)) in self.enc.iter().enumerate() {
            let wi = tape.param(params, w);
            let bi = tape.param(params, b);
            cur = tape.conv3d(cur, wi, bi, self.spec.strides[i], 1);
            let gi = tape.param(params, gamma);
            let be = tape.param(params, beta);
            cur = tape.instance_norm(cur, gi, be, INSTANCE_NORM_EPS);
            let al = tape.param(params, alpha);
            cur = tape.prelu(cur, al);
        }
        let (bc, (bx, by, bz)) = self.bottleneck;
        let flat = bc * bx * by * bz;
        cur = tape.reshape(cur, &[n_batch, flat]);

        let mw = tape.param(params, self.fc_mean.0);
        let mb = tape.param(params, self.fc_mean.1);
        let mean = tape.dense(cur, mw, mb);
        let vw = tape.param(params, self.fc_logvar.0);
        let vb = tape.param(params, self.fc_logvar.1);
        let logvar = tape.dense(cur, vw, vb);

        let eps_tensor = eps.unwrap_or_else(|| Tensor::zeros(&[n_batch, self.spec.latent_size]));
        let eps_id = tape.constant(eps_tensor);
        let z = tape.reparameterize(mean, logvar, eps_id);

        let dw = tape.param(params, self.fc_decode.0);
        let db = tape.param(params, self.fc_decode.1);
        let mut up = tape.dense(z, dw, db);
        up = tape.reshape(up, &[n_batch, bc, bz, by, bx]);
        for &(w, b, gamma, beta, alpha, stride) in &self.dec {
            let wi = tape.param(params, w);
            let bi = tape.param(params, b);
            up = tape.conv_transpose3d(up, wi, bi, stride, 1, stride - 1);
            let gi = tape.param(params, gamma);
            let be = tape.param(params, beta);
            up = tape.instance_norm(up, gi, be, INSTANCE_NORM_EPS);
            let al = tape.param(params, alpha);
            up = tape.prelu(up, al);
        }
        let (w, b, stride) = self.dec_final;
        let wi = tape.param(params, w);
        let bi = tape.param(params, b);
        let logits = tape.conv_transpose3d(up, wi, bi, stride, 1, stride - 1);
        (logits, mean, logvar)
    }
}

/// Soft Dice reconstruction loss plus `kl_weight` times the latent KL term.
pub fn vae_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: NodeId,
    target: NodeId,
    mean: NodeId,
    logvar: NodeId,
    kl_weight: f64,
) -> NodeId {
    let dice = tape.soft_dice_loss(logits, target, DICE_SMOOTH);
    let kl = tape.kl_normal(mean, logvar);
    tape.add_scaled(dice, kl, kl_weight)
}

/// A trainable reconstruction model: builds its loss on a tape and exposes
/// deterministic reconstruction for scoring.
pub trait ReconModel<T: Scalar> {
    /// Builds `loss(model(input), target)` on the tape against an external
    /// parameter store of the model's layout. `eps_seed` drives the VAE
    /// latent draw; `None` uses the mean latent.
    fn loss_with(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        target: Tensor<T>,
        eps_seed: Option<u64>,
    ) -> NodeId;

    /// As [`Self::loss_with`] with the model's own parameters.
    fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        target: Tensor<T>,
        eps_seed: Option<u64>,
    ) -> NodeId;

    /// Reconstruction probabilities (sigmoid outputs) for one input batch.
    fn reconstruct_probs(&self, input: Tensor<T>, eps_seed: Option<u64>) -> Tensor<T>;

    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    fn kind(&self) -> NetworkKind;

    /// One optimizer update from the accumulated gradients.
    fn apply_adam(&mut self, cfg: &AdamConfig) {
        adam_step(self.params_mut(), cfg);
    }
}

impl<T: Scalar> ReconModel<T> for UNet<T> {
    fn loss_with(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        target: Tensor<T>,
        _eps_seed: Option<u64>,
    ) -> NodeId {
        let x = tape.constant(input);
        let logits = self.forward_with(params, tape, x);
        let t = tape.constant(target);
        tape.soft_dice_loss(logits, t, DICE_SMOOTH)
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        target: Tensor<T>,
        eps_seed: Option<u64>,
    ) -> NodeId {
        self.loss_with(&self.params, tape, input, target, eps_seed)
    }

    fn reconstruct_probs(&self, input: Tensor<T>, _eps_seed: Option<u64>) -> Tensor<T> {
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let logits = self.forward(&mut tape, x);
        let probs = tape.sigmoid(logits);
        tape.value(probs).clone()
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn kind(&self) -> NetworkKind {
        NetworkKind::Dae
    }
}

fn draw_eps<T: Scalar>(n_batch: usize, latent: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Box-Muller on uniform draws keeps the dependency surface small
    let mut values = Vec::with_capacity(n_batch * latent);
    while values.len() < n_batch * latent {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        values.push(T::from_f64(r * theta.cos()));
        if values.len() < n_batch * latent {
            values.push(T::from_f64(r * theta.sin()));
        }
    }
    Tensor::from_vec(&[n_batch, latent], values)
}

impl<T: Scalar> ReconModel<T> for Vae<T> {
    fn loss_with(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        target: Tensor<T>,
        eps_seed: Option<u64>,
    ) -> NodeId {
        let n_batch = input.shape()[0];
        let eps = eps_seed.map(|s| draw_eps(n_batch, self.spec.latent_size, s));
        let x = tape.constant(input);
        let (logits, mean, logvar) = self.forward_with(params, tape, x, eps);
        let t = tape.constant(target);
        vae_loss(tape, logits, t, mean, logvar, self.spec.kl_weight)
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        target: Tensor<T>,
        eps_seed: Option<u64>,
    ) -> NodeId {
        self.loss_with(&self.params, tape, input, target, eps_seed)
    }

    fn reconstruct_probs(&self, input: Tensor<T>, eps_seed: Option<u64>) -> Tensor<T> {
        let n_batch = input.shape()[0];
        let eps = eps_seed.map(|s| draw_eps(n_batch, self.spec.latent_size, s));
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let (logits, _, _) = self.forward(&mut tape, x, eps);
        let probs = tape.sigmoid(logits);
        tape.value(probs).clone()
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn kind(&self) -> NetworkKind {
        self.spec.kind
    }
}

fn random_tensor_f64(shape: &[usize], seed: u64, binary: bool) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| {
                if binary {
                    f64::from(rng.gen_bool(0.4))
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect(),
    )
}

/// End-to-end finite-difference check of a small denoiser U-Net
/// (channels (2,3), stride 2, one residual unit, 4^3 input, f64).
/// Returns the max relative gradient error across all parameters.
pub fn desk_unet_gradcheck_max_rel_err() -> f64 {
    use crate::neural::gradcheck::finite_diff_params_max_rel_err;
    let spec = NetworkSpec {
        kind: NetworkKind::Dae,
        in_channels: 2,
        out_channels: 2,
        channels: vec![2, 3],
        strides: vec![2],
        num_res_units: 1,
        latent_size: 0,
        kl_weight: 0.0,
    };
    let h = 1e-5;
    let margin = 2e-3;
    let shape = [1usize, 2, 4, 4, 4];
    for seed in 0..500u64 {
        let net = build_unet::<f64>(&spec, (4, 4, 4), seed).expect("tiny spec");
        let input = random_tensor_f64(&shape, seed * 2 + 1, false);
        let target = random_tensor_f64(&shape, seed * 2 + 2, true);
        let mut tape = Tape::new();
        let _ = net.loss_on_tape(&mut tape, input.clone(), target.clone(), None);
        if tape.min_abs_prelu_input().unwrap_or(1.0) <= margin {
            continue;
        }
        let mut store = net.params.clone();
        return finite_diff_params_max_rel_err(
            &mut store,
            |params, tape| net.loss_with(params, tape, input.clone(), target.clone(), None),
            h,
            usize::MAX,
            seed,
        );
    }
    panic!("no kink-free U-Net configuration found");
}

/// End-to-end finite-difference check of a small VAE (channels (2,3),
/// strides (2,2), latent 3, sampled pathway, 8^3 input, f64). The 8^3
/// input keeps the bottleneck at 2^3, where instance norm is
/// nondegenerate.
pub fn desk_vae_gradcheck_max_rel_err() -> f64 {
    use crate::neural::gradcheck::finite_diff_params_max_rel_err;
    let spec = NetworkSpec {
        kind: NetworkKind::VaeSingle,
        in_channels: 1,
        out_channels: 1,
        channels: vec![2, 3],
        strides: vec![2, 2],
        num_res_units: 0,
        latent_size: 3,
        kl_weight: 1e-2,
    };
    let h = 1e-5;
    let margin = 2e-3;
    let shape = [1usize, 1, 8, 8, 8];
    for seed in 0..500u64 {
        let net = build_vae::<f64>(&spec, (8, 8, 8), seed).expect("tiny spec");
        let input = random_tensor_f64(&shape, seed * 2 + 1, false);
        let target = random_tensor_f64(&shape, seed * 2 + 2, true);
        let mut tape = Tape::new();
        let _ = net.loss_on_tape(&mut tape, input.clone(), target.clone(), Some(seed));
        if tape.min_abs_prelu_input().unwrap_or(1.0) <= margin {
            continue;
        }
        let mut store = net.params.clone();
        return finite_diff_params_max_rel_err(
            &mut store,
            |params, tape| {
                net.loss_with(params, tape, input.clone(), target.clone(), Some(seed))
            },
            h,
            usize::MAX,
            seed,
        );
    }
    panic!("no kink-free VAE configuration found");
}
