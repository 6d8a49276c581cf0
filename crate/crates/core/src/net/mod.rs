//! Recurrent residual network producing `O_t = P_t + F(I_t, I_{t-1}, P_t, O_{t-1})`.

mod params;

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeometry, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::tensor_file;
use crate::video::{Frame, FrameSequence, VideoTriplet, CHANNELS};

pub use params::{BoundParams, ParamSet};

const NORM_EPS: f64 = 1e-5;
const INPUT_CHANNELS: usize = 4 * CHANNELS;
pub const DOWNSAMPLE_STAGES: usize = 2;
pub const CONFIG_KEY: &str = "net_config";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub base_channels: usize,
    pub residual_blocks: usize,
    pub lstm_hidden_channels: usize,
    pub downsample_stages: usize,
    pub zero_init_output: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::with_base(32)
    }
}

impl NetConfig {
    pub fn with_base(base_channels: usize) -> Self {
        Self {
            base_channels,
            residual_blocks: 5,
            lstm_hidden_channels: 4 * base_channels,
            downsample_stages: DOWNSAMPLE_STAGES,
            zero_init_output: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.residual_blocks == 0 || self.lstm_hidden_channels == 0 {
            return Err(Error::Spec(
                "network channel and block counts must be at least 1".into(),
            ));
        }
        if self.downsample_stages != DOWNSAMPLE_STAGES {
            return Err(Error::Spec(format!(
                "downsample_stages is fixed at {DOWNSAMPLE_STAGES}"
            )));
        }
        Ok(())
    }
}

/// ConvLSTM maps and the previous output, frame-level.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub lstm_hidden: Tensor,
    pub lstm_cell: Tensor,
    pub prev_output: Frame,
}

/// Recurrent state living on a graph.
#[derive(Clone, Copy, Debug)]
pub struct GraphState<'g> {
    pub hidden: Var<'g>,
    pub cell: Var<'g>,
    pub prev_output: Var<'g>,
}

/// Forward outputs `O_{t0..t0+k}` and backward outputs `O'` in generation
/// order, i.e. `O'_{t0+k-1}` first.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub forward_outputs: FrameSequence,
    pub backward_outputs: FrameSequence,
}

impl RolloutResult {
    /// `k`, the number of backward frames.
    pub fn k(&self) -> usize {
        self.backward_outputs.len()
    }

    /// `O'` at window-relative time `t < k`.
    pub fn backward_at(&self, t: usize) -> &Frame {
        &self.backward_outputs[self.k() - 1 - t]
    }

    /// The whole generated sequence, `2k + 1` frames.
    pub fn generated(&self) -> impl Iterator<Item = &Frame> {
        self.forward_outputs
            .iter()
            .chain(self.backward_outputs.iter())
    }
}

/// Graph-level counterpart of [`RolloutResult`]; `backward` is indexed by
/// window-relative time (`backward[t] = O'_t`).
pub struct GraphRollout<'g> {
    pub forward: Vec<Var<'g>>,
    pub backward: Vec<Var<'g>>,
}

/// Window inputs as graph values, one `[1, 3, h, w]` value per frame.
pub struct GraphWindow<'g> {
    pub raw: Vec<Var<'g>>,
    pub processed: Vec<Var<'g>>,
}

impl<'g> GraphWindow<'g> {
    pub fn constants(g: &'g Graph, triplet: &VideoTriplet) -> Self {
        Self {
            raw: triplet
                .raw
                .iter()
                .map(|f| g.constant(f.to_tensor()))
                .collect(),
            processed: triplet
                .processed
                .iter()
                .map(|f| g.constant(f.to_tensor()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

pub struct ConsistencyNet {
    config: NetConfig,
    params: ParamSet,
}

impl std::fmt::Debug for ConsistencyNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConsistencyNet")
            .field("config", &self.config)
            .field("parameters", &self.params.count())
            .finish()
    }
}

fn conv_param(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    params.insert(
        format!("{name}.weight"),
        Tensor::from_fn(&[cout, cin, k, k], |_| normal.sample(rng)),
    );
    params.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

fn transpose_param(
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
) {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    params.insert(
        format!("{name}.weight"),
        Tensor::from_fn(&[cin, cout, k, k], |_| normal.sample(rng)),
    );
    params.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

fn norm_param(params: &mut ParamSet, name: &str, c: usize) {
    params.insert(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
    params.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
}

impl ConsistencyNet {
    /// Seeded initialisation.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = config.base_channels;
        let hid = config.lstm_hidden_channels;
        let mut p = ParamSet::new();
        conv_param(&mut p, &mut rng, "enc1", b, INPUT_CHANNELS, 7);
        norm_param(&mut p, "enc1.norm", b);
        conv_param(&mut p, &mut rng, "enc2", 2 * b, b, 3);
        norm_param(&mut p, "enc2.norm", 2 * b);
        conv_param(&mut p, &mut rng, "enc3", 4 * b, 2 * b, 3);
        norm_param(&mut p, "enc3.norm", 4 * b);
        for r in 0..config.residual_blocks {
            conv_param(&mut p, &mut rng, &format!("res{r}.conv1"), 4 * b, 4 * b, 3);
            norm_param(&mut p, &format!("res{r}.norm1"), 4 * b);
            conv_param(&mut p, &mut rng, &format!("res{r}.conv2"), 4 * b, 4 * b, 3);
            norm_param(&mut p, &format!("res{r}.norm2"), 4 * b);
        }
        conv_param(&mut p, &mut rng, "lstm", 4 * hid, 4 * b + hid, 3);
        {
            // forget gate starts open
            let bias = p.index_of("lstm.bias").expect("just inserted");
            let t = p.tensor_mut(bias);
            for v in &mut t.data_mut()[hid..2 * hid] {
                *v = 1.0;
            }
        }
        transpose_param(&mut p, &mut rng, "dec1", hid + 4 * b, 2 * b, 3);
        norm_param(&mut p, "dec1.norm", 2 * b);
        transpose_param(&mut p, &mut rng, "dec2", 4 * b, b, 3);
        norm_param(&mut p, "dec2.norm", b);
        let out_in = 2 * b + INPUT_CHANNELS;
        if config.zero_init_output {
            p.insert("out.weight", Tensor::zeros(&[CHANNELS, out_in, 3, 3]));
            p.insert("out.bias", Tensor::zeros(&[CHANNELS]));
        } else {
            let normal =
                Normal::new(0.0, 0.1 / (out_in as f64 * 9.0).sqrt()).expect("positive std");
            p.insert(
                "out.weight",
                Tensor::from_fn(&[CHANNELS, out_in, 3, 3], |_| normal.sample(&mut rng)),
            );
            p.insert(
                "out.bias",
                Tensor::from_fn(&[CHANNELS], |_| normal.sample(&mut rng)),
            );
        }
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: NetConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        if reference.params.names() != params.names() {
            return Err(Error::Shape(
                "parameter names do not match the network layout".into(),
            ));
        }
        for ((name, a), (_, b)) in reference.params.iter().zip(params.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        let f = 1 << DOWNSAMPLE_STAGES;
        if height == 0 || width == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return Err(Error::Shape(format!(
                "frame {height}×{width} must have sides divisible by {f}"
            )));
        }
        Ok(())
    }

    /// Zero LSTM maps with `prev_output = first_output`.
    pub fn initial_state(&self, first_output: &Frame) -> RecurrentState {
        let (h, w) = first_output.dims();
        let f = 1 << DOWNSAMPLE_STAGES;
        let shape = [1, self.config.lstm_hidden_channels, h / f, w / f];
        RecurrentState {
            lstm_hidden: Tensor::zeros(&shape),
            lstm_cell: Tensor::zeros(&shape),
            prev_output: first_output.clone(),
        }
    }

    pub fn initial_graph_state<'g>(&self, g: &'g Graph, first_output: Var<'g>) -> GraphState<'g> {
        let shape = first_output.shape();
        let f = 1 << DOWNSAMPLE_STAGES;
        let s = [
            shape[0],
            self.config.lstm_hidden_channels,
            shape[2] / f,
            shape[3] / f,
        ];
        GraphState {
            hidden: g.constant(Tensor::zeros(&s)),
            cell: g.constant(Tensor::zeros(&s)),
            prev_output: first_output,
        }
    }

    /// One recurrent step on graph values.
    pub fn step_var<'g>(
        &self,
        p: &BoundParams<'g>,
        i_t: Var<'g>,
        i_prev: Var<'g>,
        p_t: Var<'g>,
        state: &GraphState<'g>,
    ) -> Result<(Var<'g>, GraphState<'g>)> {
        let shape = p_t.shape();
        if shape.len() != 4 || shape[1] != CHANNELS {
            return Err(Error::Shape(format!(
                "expected [n, 3, h, w] input, got {shape:?}"
            )));
        }
        for other in [i_t.shape(), i_prev.shape(), state.prev_output.shape()] {
            if other != shape {
                return Err(Error::Shape(format!(
                    "step inputs differ: {other:?} vs {shape:?}"
                )));
            }
        }
        self.check_dims(shape[2], shape[3])?;
        let conv = |x: Var<'g>, name: &str, geo: ConvGeometry| {
            x.conv2d(
                p.var(&format!("{name}.weight")),
                Some(p.var(&format!("{name}.bias"))),
                geo,
            )
        };
        let norm = |x: Var<'g>, name: &str| {
            x.instance_norm(
                p.var(&format!("{name}.gamma")),
                p.var(&format!("{name}.beta")),
                NORM_EPS,
            )
        };
        let up = |x: Var<'g>, name: &str| {
            x.conv_transpose2d(
                p.var(&format!("{name}.weight")),
                Some(p.var(&format!("{name}.bias"))),
                ConvGeometry::new(3, 2, 1),
                1,
            )
        };
        let same3 = ConvGeometry::new(3, 1, 1);
        let down = ConvGeometry::new(3, 2, 1);

        let input = Var::concat(&[i_t, i_prev, p_t, state.prev_output], 1);
        let e1 = norm(conv(input, "enc1", ConvGeometry::new(7, 1, 3)), "enc1.norm").relu();
        let e2 = norm(conv(e1, "enc2", down), "enc2.norm").relu();
        let e3 = norm(conv(e2, "enc3", down), "enc3.norm").relu();
        let mut x = e3;
        for r in 0..self.config.residual_blocks {
            let y = norm(
                conv(x, &format!("res{r}.conv1"), same3),
                &format!("res{r}.norm1"),
            )
            .relu();
            let y = norm(
                conv(y, &format!("res{r}.conv2"), same3),
                &format!("res{r}.norm2"),
            );
            x = x.add(y);
        }
        let hid = self.config.lstm_hidden_channels;
        let gates = conv(Var::concat(&[x, state.hidden], 1), "lstm", same3);
        let i_gate = gates.narrow(1, 0, hid).sigmoid();
        let f_gate = gates.narrow(1, hid, hid).sigmoid();
        let o_gate = gates.narrow(1, 2 * hid, hid).sigmoid();
        let g_gate = gates.narrow(1, 3 * hid, hid).tanh();
        let cell = f_gate.mul(state.cell).add(i_gate.mul(g_gate));
        let hidden = o_gate.mul(cell.tanh());
        let d1 = norm(up(Var::concat(&[hidden, e3], 1), "dec1"), "dec1.norm").relu();
        let d2 = norm(up(Var::concat(&[d1, e2], 1), "dec2"), "dec2.norm").relu();
        let residual = conv(Var::concat(&[d2, e1, input], 1), "out", same3);
        let out = p_t.add(residual);
        Ok((
            out,
            GraphState {
                hidden,
                cell,
                prev_output: out,
            },
        ))
    }

    /// Forward rollout on a window: `O_0 = P_0`, then one step per frame.
    pub fn rollout_var<'g>(
        &self,
        p: &BoundParams<'g>,
        w: &GraphWindow<'g>,
    ) -> Result<(Vec<Var<'g>>, GraphState<'g>)> {
        if w.is_empty() {
            return Err(Error::WindowTooShort(
                "rollout needs at least one frame".into(),
            ));
        }
        let g = w.processed[0].graph();
        let mut state = self.initial_graph_state(g, w.processed[0]);
        let mut outputs = vec![w.processed[0]];
        for t in 1..w.len() {
            let (o, s) = self.step_var(p, w.raw[t], w.raw[t - 1], w.processed[t], &state)?;
            outputs.push(o);
            state = s;
        }
        Ok((outputs, state))
    }

    /// Forward rollout then backward through the turn with the state carried
    /// over. The step producing `O'_t` sees `(I_t, I_{t+1}, P_t)`.
    pub fn pingpong_var<'g>(
        &self,
        p: &BoundParams<'g>,
        w: &GraphWindow<'g>,
    ) -> Result<GraphRollout<'g>> {
        if w.len() < 2 {
            return Err(Error::WindowTooShort(format!(
                "ping pong needs at least 2 frames, got {}",
                w.len()
            )));
        }
        let k = w.len() - 1;
        let (forward, mut state) = self.rollout_var(p, w)?;
        let mut backward = vec![None; k];
        for t in (0..k).rev() {
            let (o, s) = self.step_var(p, w.raw[t], w.raw[t + 1], w.processed[t], &state)?;
            backward[t] = Some(o);
            state = s;
        }
        Ok(GraphRollout {
            forward,
            backward: backward.into_iter().map(|o| o.expect("filled")).collect(),
        })
    }

    /// One frame-level step.
    pub fn step(
        &self,
        i_t: &Frame,
        i_prev: &Frame,
        p_t: &Frame,
        state: &RecurrentState,
    ) -> Result<(Frame, RecurrentState)> {
        for f in [i_prev, p_t, &state.prev_output] {
            if f.dims() != i_t.dims() {
                return Err(Error::Shape(format!(
                    "step inputs differ: {:?} vs {:?}",
                    f.dims(),
                    i_t.dims()
                )));
            }
        }
        self.check_dims(i_t.height(), i_t.width())?;
        let f = 1 << DOWNSAMPLE_STAGES;
        let expect = [
            1,
            self.config.lstm_hidden_channels,
            i_t.height() / f,
            i_t.width() / f,
        ];
        if state.lstm_hidden.shape() != expect || state.lstm_cell.shape() != expect {
            return Err(Error::Shape(format!("recurrent state must be {expect:?}")));
        }
        let g = Graph::new();
        let p = self.params.bind(&g, false);
        let gs = GraphState {
            hidden: g.constant(state.lstm_hidden.clone()),
            cell: g.constant(state.lstm_cell.clone()),
            prev_output: g.constant(state.prev_output.to_tensor()),
        };
        let (out, next) = self.step_var(
            &p,
            g.constant(i_t.to_tensor()),
            g.constant(i_prev.to_tensor()),
            g.constant(p_t.to_tensor()),
            &gs,
        )?;
        let frame = Frame::from_tensor(&out.value())?;
        Ok((
            frame.clone(),
            RecurrentState {
                lstm_hidden: (*next.hidden.value()).clone(),
                lstm_cell: (*next.cell.value()).clone(),
                prev_output: frame,
            },
        ))
    }

    /// Frame-level rollout over a whole triplet.
    pub fn rollout(&self, triplet: &VideoTriplet) -> Result<FrameSequence> {
        let (outputs, _) = self.rollout_with_state(triplet)?;
        FrameSequence::new(outputs)
    }

    fn rollout_with_state(&self, triplet: &VideoTriplet) -> Result<(Vec<Frame>, RecurrentState)> {
        if triplet.is_empty() {
            return Err(Error::WindowTooShort(
                "rollout needs at least one frame".into(),
            ));
        }
        let first = triplet.processed[0].clone();
        let mut state = self.initial_state(&first);
        let mut outputs = vec![first];
        for t in 1..triplet.len() {
            let (o, s) = self.step(
                &triplet.raw[t],
                &triplet.raw[t - 1],
                &triplet.processed[t],
                &state,
            )?;
            outputs.push(o);
            state = s;
        }
        Ok((outputs, state))
    }

    pub fn pingpong_rollout(&self, triplet: &VideoTriplet) -> Result<RolloutResult> {
        if triplet.len() < 2 {
            return Err(Error::WindowTooShort(format!(
                "ping pong needs at least 2 frames, got {}",
                triplet.len()
            )));
        }
        let k = triplet.len() - 1;
        let (forward, mut state) = self.rollout_with_state(triplet)?;
        let mut backward = Vec::with_capacity(k);
        for t in (0..k).rev() {
            let (o, s) = self.step(
                &triplet.raw[t],
                &triplet.raw[t + 1],
                &triplet.processed[t],
                &state,
            )?;
            backward.push(o);
            state = s;
        }
        Ok(RolloutResult {
            forward_outputs: FrameSequence::new(forward)?,
            backward_outputs: FrameSequence::new(backward)?,
        })
    }

    pub fn metadata(&self) -> HashMap<String, String> {
        HashMap::from([(
            CONFIG_KEY.to_string(),
            serde_json::to_string(&self.config).expect("config serialises"),
        )])
    }

    /// Writes parameters and configuration.
    pub fn save(&self, path: &Path) -> Result<()> {
        tensor_file::save(path, &self.params.to_map(), self.metadata())
    }

    /// Loads a file written by [`Self::save`] or a training checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let archive = tensor_file::load(path)?;
        let config: NetConfig = serde_json::from_str(archive.meta(path, CONFIG_KEY)?)
            .map_err(|e| Error::format(path, format!("bad network config: {e}")))?;
        config.validate()?;
        let layout = Self::new(config, 0)?;
        let mut params = ParamSet::new();
        for name in layout.params.names() {
            params.insert(name.clone(), archive.get(path, name)?.clone());
        }
        Self::from_params(config, params).map_err(|e| Error::format(path, e.to_string()))
    }
}
