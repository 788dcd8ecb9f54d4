use super::{BackboneSpec, Conditioning, Family};
use crate::nn::{
    cbn, concat_condition, film, AffinePredictor, BatchNorm, Conv1d, Linear, Mode, NnError, ParamStore, Tape, Var,
};
use crate::rng::stream;

/// Normalization plus the block's conditioning hook.
#[derive(Debug, Clone)]
struct CondNorm {
    bn: BatchNorm,
    hook: Hook,
}

#[derive(Debug, Clone)]
enum Hook {
    None,
    Concat(Linear),
    Film(AffinePredictor),
    Cbn(AffinePredictor),
}

impl CondNorm {
    fn new(store: &mut ParamStore, name: &str, channels: usize, spec: &BackboneSpec) -> Self {
        let cond = spec.conditioning;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), channels, cond != Conditioning::Cbn);
        let hook = match cond {
            Conditioning::None => Hook::None,
            Conditioning::Concat => Hook::Concat(Linear::zeros(store, &format!("{name}.concat"), spec.cond_dim, 1)),
            Conditioning::Film => Hook::Film(AffinePredictor::new(
                store,
                &format!("{name}.film"),
                spec.cond_dim,
                channels,
            )),
            Conditioning::Cbn => Hook::Cbn(AffinePredictor::new(
                store,
                &format!("{name}.cbn"),
                spec.cond_dim,
                channels,
            )),
        };
        Self { bn, hook }
    }

    /// Normalization with FiLM / CBN modulation applied.
    fn norm(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: Var,
        c: Option<Var>,
        mode: Mode,
    ) -> Result<Var, NnError> {
        match &self.hook {
            Hook::Cbn(p) => cbn(tape, store, x, need(c)?, p, &self.bn, mode),
            Hook::Film(p) => {
                let y = self.bn.forward(tape, store, x, mode)?;
                film(tape, store, y, need(c)?, p)
            }
            Hook::None | Hook::Concat(_) => self.bn.forward(tape, store, x, mode),
        }
    }

    /// Appends the concat channel, if this block uses concat conditioning.
    fn append(&self, tape: &mut Tape, store: &ParamStore, x: Var, c: Option<Var>) -> Result<Var, NnError> {
        match &self.hook {
            Hook::Concat(proj) => concat_condition(tape, store, x, need(c)?, proj),
            _ => Ok(x),
        }
    }

    fn n_params(&self) -> usize {
        self.bn.n_params()
            + match &self.hook {
                Hook::None => 0,
                Hook::Concat(l) => l.n_params(),
                Hook::Film(p) | Hook::Cbn(p) => p.n_params(),
            }
    }
}

fn need(c: Option<Var>) -> Result<Var, NnError> {
    c.ok_or_else(|| NnError::Invalid("conditioned block called without an angle input".into()))
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Block {
    /// conv → BN → ReLU → conv → BN(+cond) → +shortcut → [concat] → ReLU
    Residual {
        conv1: Conv1d,
        bn1: BatchNorm,
        conv2: Conv1d,
        out: CondNorm,
        shortcut: Option<(Conv1d, BatchNorm)>,
    },
    /// conv(stride 2) → BN(+cond) → [concat] → ReLU
    Conv { conv: Conv1d, out: CondNorm },
    /// linear → BN(+cond) → [concat] → ReLU
    Dense { lin: Linear, out: CondNorm },
}

/// The per-profile feature extractor.
#[derive(Debug, Clone)]
pub(crate) struct Backbone {
    family: Family,
    stem: Option<(Conv1d, BatchNorm)>,
    blocks: Vec<Block>,
    latent_dim: usize,
}

impl Backbone {
    /// Registers all parameters in `store`. Each layer draws its initial
    /// weights from its own stream `init/<layer name>`, so adding a
    /// conditioning hook never changes the other layers' initialization.
    pub(crate) fn build(spec: &BackboneSpec, store: &mut ParamStore, seed: u64) -> Self {
        let k = spec.kernel;
        let pad = k / 2;
        let extra = usize::from(spec.conditioning == Conditioning::Concat);
        let conv = |store: &mut ParamStore, name: &str, cin, cout, k, stride, pad| {
            Conv1d::new(
                store,
                name,
                cin,
                cout,
                k,
                stride,
                pad,
                false,
                &mut stream(seed, &format!("init/{name}")),
            )
        };
        let mut blocks = Vec::new();
        let mut stem = None;
        let mut c_in;
        match spec.family {
            Family::Resnet => {
                let w0 = spec.widths[0];
                stem = Some((
                    conv(store, "stem.conv", 1, w0, k, 1, pad),
                    BatchNorm::new(store, "stem.bn", w0, true),
                ));
                c_in = w0;
                for (i, &w) in spec.widths.iter().enumerate() {
                    let name = format!("block{i}");
                    let stride = if i == 0 { 1 } else { 2 };
                    let conv1 = conv(store, &format!("{name}.conv1"), c_in, w, k, stride, pad);
                    let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), w, true);
                    let conv2 = conv(store, &format!("{name}.conv2"), w, w, k, 1, pad);
                    let out = CondNorm::new(store, &format!("{name}.out"), w, spec);
                    let shortcut = (c_in != w || stride != 1).then(|| {
                        (
                            conv(store, &format!("{name}.short.conv"), c_in, w, 1, stride, 0),
                            BatchNorm::new(store, &format!("{name}.short.bn"), w, true),
                        )
                    });
                    blocks.push(Block::Residual {
                        conv1,
                        bn1,
                        conv2,
                        out,
                        shortcut,
                    });
                    c_in = w + extra;
                }
            }
            Family::Conv => {
                c_in = 1;
                for (i, &w) in spec.widths.iter().enumerate() {
                    let name = format!("block{i}");
                    let c = conv(store, &format!("{name}.conv"), c_in, w, k, 2, pad);
                    let out = CondNorm::new(store, &format!("{name}.out"), w, spec);
                    blocks.push(Block::Conv { conv: c, out });
                    c_in = w + extra;
                }
            }
            Family::Mlp => {
                c_in = spec.input_len;
                for (i, &w) in spec.widths.iter().enumerate() {
                    let name = format!("block{i}");
                    let lname = format!("{name}.fc");
                    let lin = Linear::new(
                        store,
                        &lname,
                        c_in,
                        w,
                        false,
                        &mut stream(seed, &format!("init/{lname}")),
                    );
                    let out = CondNorm::new(store, &format!("{name}.out"), w, spec);
                    blocks.push(Block::Dense { lin, out });
                    c_in = w + extra;
                }
            }
        }
        Self {
            family: spec.family,
            stem,
            blocks,
            latent_dim: c_in,
        }
    }

    /// Width `F` of the latent vector.
    pub(crate) fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub(crate) fn n_params(&self) -> usize {
        let stem = self.stem.as_ref().map_or(0, |(c, b)| c.n_params() + b.n_params());
        stem + self
            .blocks
            .iter()
            .map(|b| match b {
                Block::Residual {
                    conv1,
                    bn1,
                    conv2,
                    out,
                    shortcut,
                } => {
                    conv1.n_params()
                        + bn1.n_params()
                        + conv2.n_params()
                        + out.n_params()
                        + shortcut.as_ref().map_or(0, |(c, b)| c.n_params() + b.n_params())
                }
                Block::Conv { conv, out } => conv.n_params() + out.n_params(),
                Block::Dense { lin, out } => lin.n_params() + out.n_params(),
            })
            .sum::<usize>()
    }

    /// `(N, 1, L)` profiles → `(N, F, 1)` latents. `c` is the `(N, D, 1)`
    /// condition, required iff the backbone is conditioned.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: Var,
        c: Option<Var>,
        mode: Mode,
    ) -> Result<Var, NnError> {
        let mut h = match self.family {
            Family::Mlp => tape.flatten(x),
            _ => x,
        };
        if let Some((conv, bn)) = &self.stem {
            let y = conv.forward(tape, store, h)?;
            let y = bn.forward(tape, store, y, mode)?;
            h = tape.relu(y);
        }
        for block in &self.blocks {
            h = match block {
                Block::Residual {
                    conv1,
                    bn1,
                    conv2,
                    out,
                    shortcut,
                } => {
                    let y = conv1.forward(tape, store, h)?;
                    let y = bn1.forward(tape, store, y, mode)?;
                    let y = tape.relu(y);
                    let y = conv2.forward(tape, store, y)?;
                    let y = out.norm(tape, store, y, c, mode)?;
                    let s = match shortcut {
                        Some((sc, sb)) => {
                            let s = sc.forward(tape, store, h)?;
                            sb.forward(tape, store, s, mode)?
                        }
                        None => h,
                    };
                    let y = tape.add(y, s)?;
                    let y = out.append(tape, store, y, c)?;
                    tape.relu(y)
                }
                Block::Conv { conv, out } => {
                    let y = conv.forward(tape, store, h)?;
                    let y = out.norm(tape, store, y, c, mode)?;
                    let y = out.append(tape, store, y, c)?;
                    tape.relu(y)
                }
                Block::Dense { lin, out } => {
                    let y = lin.forward(tape, store, h)?;
                    let y = out.norm(tape, store, y, c, mode)?;
                    let y = out.append(tape, store, y, c)?;
                    tape.relu(y)
                }
            };
        }
        Ok(match self.family {
            Family::Mlp => h,
            _ => tape.global_avg_pool(h),
        })
    }
}
