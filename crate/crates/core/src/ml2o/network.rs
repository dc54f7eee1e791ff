//! Coordinatewise recurrent direction generator.
//!
//! Every decision coordinate is a row of a batch: the specific cells see the
//! two-channel encoding of that coordinate's partial derivatives, the shared
//! cell sees the concatenated specific hidden states, and a linear head maps
//! the shared hidden state to one output per coordinate. Weights are shared
//! across coordinates; each coordinate has its own recurrent state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::minnorm::GradientMatrix;
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::rng::SimRng;

pub const INPUT_CHANNELS: usize = 2;
pub const DEFAULT_SCALE: f64 = 10.0;
const INIT_RANGE: f64 = 0.1;

/// Two-channel encoding of one gradient vector, one `[magnitude, sign]`
/// pair per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedGradient {
    pub channels: Vec<[f64; 2]>,
}

impl PreprocessedGradient {
    /// Row-major `N x 2` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.channels.iter().flat_map(|c| c.iter().copied()).collect();
        Tensor::matrix(self.channels.len(), INPUT_CHANNELS, data).expect("consistent shape")
    }
}

/// Log-magnitude / sign encoding with scale `p`:
/// `|g| >= e^-p` maps to `(ln|g| / p, sign g)`, smaller values to `(-1, e^p g)`.
pub fn preprocess_gradient(g: &[f64], p: f64) -> Result<PreprocessedGradient> {
    if !(p > 0.0) {
        return Err(Error::invalid(format!("preprocessing scale must be positive, got {p}")));
    }
    let threshold = (-p).exp();
    let channels = g
        .iter()
        .map(|&v| {
            if v.abs() >= threshold {
                [(v.abs().ln() / p).max(-1.0), v.signum()]
            } else {
                [-1.0, p.exp() * v]
            }
        })
        .collect();
    Ok(PreprocessedGradient { channels })
}

/// Weights of one LSTM cell with input width `input` and hidden width `hidden`.
/// Gate blocks in the `4 * hidden` columns are ordered input, forget,
/// candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub input: usize,
    pub hidden: usize,
    /// `input x 4H`
    pub w_x: Tensor,
    /// `1 x 4H`
    pub b_x: Tensor,
    /// `H x 4H`
    pub w_h: Tensor,
    /// `1 x 4H`
    pub b_h: Tensor,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCellParams {
            input,
            hidden,
            w_x: Tensor::zeros(&[input, 4 * hidden]),
            b_x: Tensor::zeros(&[1, 4 * hidden]),
            w_h: Tensor::zeros(&[hidden, 4 * hidden]),
            b_h: Tensor::zeros(&[1, 4 * hidden]),
        }
    }

    fn validate(&self) -> Result<()> {
        let g = 4 * self.hidden;
        let ok = self.w_x.shape() == [self.input, g]
            && self.b_x.shape() == [1, g]
            && self.w_h.shape() == [self.hidden, g]
            && self.b_h.shape() == [1, g];
        if ok {
            Ok(())
        } else {
            Err(Error::shape("lstm_cell", format!("weights inconsistent with input {} hidden {}", self.input, self.hidden)))
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct CellVars {
    w_x: Var,
    b_x: Var,
    w_h: Var,
    b_h: Var,
    hidden: usize,
}

/// One LSTM step for a batch of rows.
pub(crate) fn lstm_cell_taped(tape: &mut Tape, ones: Var, s: Var, h: Var, c: Var, p: &CellVars) -> Result<(Var, Var)> {
    let hd = p.hidden;
    let xs = tape.matmul(s, p.w_x)?;
    let bx = tape.matmul(ones, p.b_x)?;
    let hs = tape.matmul(h, p.w_h)?;
    let bh = tape.matmul(ones, p.b_h)?;
    let a = tape.add(xs, bx)?;
    let b = tape.add(hs, bh)?;
    let pre = tape.add(a, b)?;
    let i_pre = tape.slice(pre, 0, hd)?;
    let f_pre = tape.slice(pre, hd, hd)?;
    let g_pre = tape.slice(pre, 2 * hd, hd)?;
    let o_pre = tape.slice(pre, 3 * hd, hd)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let g = tape.tanh(g_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next)?;
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Evaluates one cell on a batch: `s` is `rows x input`, `h` and `c` are `rows x hidden`.
pub fn lstm_cell(s: &Tensor, state: (&Tensor, &Tensor), params: &LstmCellParams) -> Result<(Tensor, Tensor)> {
    params.validate()?;
    let rows = s.outer();
    let mut tape = Tape::new();
    let ones = tape.constant(Tensor::filled(&[rows, 1], 1.0));
    let vars = CellVars {
        w_x: tape.constant(params.w_x.clone()),
        b_x: tape.constant(params.b_x.clone()),
        w_h: tape.constant(params.w_h.clone()),
        b_h: tape.constant(params.b_h.clone()),
        hidden: params.hidden,
    };
    let sv = tape.constant(s.clone());
    let hv = tape.constant(state.0.clone());
    let cv = tape.constant(state.1.clone());
    let (h, c) = lstm_cell_taped(&mut tape, ones, sv, hv, cv, &vars)?;
    Ok((tape.value(h).clone(), tape.value(c).clone()))
}

/// All learned-optimizer weights, kept in a [`ParamStore`] under names
/// `specific.{i}.*`, `shared.*` and `head.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ml2oParams {
    m: usize,
    hidden: usize,
    out_width: usize,
    store: ParamStore,
}

fn cell_prefix(cell: Option<usize>) -> String {
    match cell {
        Some(i) => format!("specific.{i}"),
        None => "shared".to_owned(),
    }
}

impl Ml2oParams {
    /// Expected `(name, shape)` of every parameter.
    pub fn layout(m: usize, hidden: usize, out_width: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let shared = m * hidden;
        let mut cell = |prefix: String, input: usize, h: usize| {
            out.push((format!("{prefix}.w_x"), vec![input, 4 * h]));
            out.push((format!("{prefix}.b_x"), vec![1, 4 * h]));
            out.push((format!("{prefix}.w_h"), vec![h, 4 * h]));
            out.push((format!("{prefix}.b_h"), vec![1, 4 * h]));
        };
        for i in 0..m {
            cell(cell_prefix(Some(i)), INPUT_CHANNELS, hidden);
        }
        cell(cell_prefix(None), shared, shared);
        out.push(("head.w".to_owned(), vec![shared, out_width]));
        out.push(("head.b".to_owned(), vec![1, out_width]));
        out
    }

    pub fn zeros(m: usize, hidden: usize) -> Result<Self> {
        if m < 1 || hidden < 1 {
            return Err(Error::invalid(format!("need m >= 1 and hidden >= 1, got m {m} hidden {hidden}")));
        }
        let mut store = ParamStore::new();
        for (name, shape) in Self::layout(m, hidden, 1) {
            store.insert(name, Tensor::zeros(&shape));
        }
        Ok(Ml2oParams { m, hidden, out_width: 1, store })
    }

    /// Entries drawn from `U[-0.1, 0.1]`.
    pub fn random(m: usize, hidden: usize, rng: &mut SimRng) -> Result<Self> {
        let mut p = Self::zeros(m, hidden)?;
        let names: Vec<String> = p.store.names().map(str::to_owned).collect();
        for name in names {
            for v in p.store.value_mut(&name)?.data_mut() {
                *v = rng.gen_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        Ok(p)
    }

    /// Builds parameters from named arrays, checking every shape.
    pub fn from_store(m: usize, hidden: usize, out_width: usize, store: ParamStore) -> Result<Self> {
        if out_width != 1 {
            return Err(Error::Checkpoint {
                field: "out_width".into(),
                detail: format!("coordinatewise head has width 1, got {out_width}"),
            });
        }
        let layout = Self::layout(m, hidden, out_width);
        if store.len() != layout.len() {
            return Err(Error::shape("ml2o params", format!("expected {} arrays, got {}", layout.len(), store.len())));
        }
        for (name, shape) in &layout {
            let t = store.value(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("ml2o params", format!("`{name}` has shape {:?}, expected {:?}", t.shape(), shape)));
            }
        }
        Ok(Ml2oParams { m, hidden, out_width, store })
    }

    pub fn objectives(&self) -> usize {
        self.m
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn shared_hidden(&self) -> usize {
        self.m * self.hidden
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Copy of one cell's weights; `None` selects the shared cell.
    pub fn cell(&self, cell: Option<usize>) -> Result<LstmCellParams> {
        let prefix = cell_prefix(cell);
        let (input, hidden) = match cell {
            Some(_) => (INPUT_CHANNELS, self.hidden),
            None => (self.shared_hidden(), self.shared_hidden()),
        };
        Ok(LstmCellParams {
            input,
            hidden,
            w_x: self.store.value(&format!("{prefix}.w_x"))?.clone(),
            b_x: self.store.value(&format!("{prefix}.b_x"))?.clone(),
            w_h: self.store.value(&format!("{prefix}.w_h"))?.clone(),
            b_h: self.store.value(&format!("{prefix}.b_h"))?.clone(),
        })
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let cur = self.store.value(name)?;
        if cur.shape() != value.shape() {
            return Err(Error::shape("ml2o params", format!("`{name}` expects {:?}, got {:?}", cur.shape(), value.shape())));
        }
        self.store.insert(name, value);
        Ok(())
    }
}

/// Recurrent state for `n` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Ml2oState {
    /// Per objective, `n x H`.
    pub specific_h: Vec<Tensor>,
    pub specific_c: Vec<Tensor>,
    /// `n x MH`.
    pub shared_h: Tensor,
    pub shared_c: Tensor,
}

impl Ml2oState {
    pub fn zeros(params: &Ml2oParams, n: usize) -> Self {
        let h = params.hidden;
        let sh = params.shared_hidden();
        Ml2oState {
            specific_h: vec![Tensor::zeros(&[n, h]); params.m],
            specific_c: vec![Tensor::zeros(&[n, h]); params.m],
            shared_h: Tensor::zeros(&[n, sh]),
            shared_c: Tensor::zeros(&[n, sh]),
        }
    }

    pub fn coordinates(&self) -> usize {
        self.shared_h.outer()
    }

    pub fn is_finite(&self) -> bool {
        self.specific_h.iter().chain(&self.specific_c).all(Tensor::is_finite)
            && self.shared_h.is_finite()
            && self.shared_c.is_finite()
    }

    fn check(&self, params: &Ml2oParams, n: usize) -> Result<()> {
        let h = params.hidden;
        let sh = params.shared_hidden();
        let ok = self.specific_h.len() == params.m
            && self.specific_c.len() == params.m
            && self.specific_h.iter().chain(&self.specific_c).all(|t| t.shape() == [n, h])
            && self.shared_h.shape() == [n, sh]
            && self.shared_c.shape() == [n, sh];
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "ml2o state",
                format!("state does not match {} objectives, hidden {}, {} coordinates", params.m, h, n),
            ))
        }
    }
}

pub(crate) struct NetVars {
    specific: Vec<CellVars>,
    shared: CellVars,
    head_w: Var,
    head_b: Var,
}

/// Puts the weights on `tape`, as differentiable parameters when `trainable`.
pub(crate) fn bind(tape: &mut Tape, params: &Ml2oParams, trainable: bool) -> Result<NetVars> {
    let get = |tape: &mut Tape, name: String| -> Result<Var> {
        if trainable {
            tape.param(&params.store, &name)
        } else {
            Ok(tape.constant(params.store.value(&name)?.clone()))
        }
    };
    let cell = |tape: &mut Tape, prefix: String, hidden: usize| -> Result<CellVars> {
        Ok(CellVars {
            w_x: get(tape, format!("{prefix}.w_x"))?,
            b_x: get(tape, format!("{prefix}.b_x"))?,
            w_h: get(tape, format!("{prefix}.w_h"))?,
            b_h: get(tape, format!("{prefix}.b_h"))?,
            hidden,
        })
    };
    let mut specific = Vec::with_capacity(params.m);
    for i in 0..params.m {
        specific.push(cell(tape, cell_prefix(Some(i)), params.hidden)?);
    }
    let shared = cell(tape, cell_prefix(None), params.shared_hidden())?;
    let (head_w, head_b) = if trainable {
        (tape.param(&params.store, "head.w")?, tape.param(&params.store, "head.b")?)
    } else {
        (
            tape.constant(params.store.value("head.w")?.clone()),
            tape.constant(params.store.value("head.b")?.clone()),
        )
    };
    Ok(NetVars { specific, shared, head_w, head_b })
}

pub(crate) struct StateVars {
    pub specific_h: Vec<Var>,
    pub specific_c: Vec<Var>,
    pub shared_h: Var,
    pub shared_c: Var,
}

impl StateVars {
    pub fn constants(tape: &mut Tape, state: &Ml2oState) -> Self {
        StateVars {
            specific_h: state.specific_h.iter().map(|t| tape.constant(t.clone())).collect(),
            specific_c: state.specific_c.iter().map(|t| tape.constant(t.clone())).collect(),
            shared_h: tape.constant(state.shared_h.clone()),
            shared_c: tape.constant(state.shared_c.clone()),
        }
    }

    pub fn values(&self, tape: &Tape) -> Ml2oState {
        Ml2oState {
            specific_h: self.specific_h.iter().map(|v| tape.value(*v).clone()).collect(),
            specific_c: self.specific_c.iter().map(|v| tape.value(*v).clone()).collect(),
            shared_h: tape.value(self.shared_h).clone(),
            shared_c: tape.value(self.shared_c).clone(),
        }
    }
}

/// Encodes every gradient row as an `N x 2` constant.
pub(crate) fn encode_inputs(tape: &mut Tape, y: &GradientMatrix) -> Result<Vec<Var>> {
    (0..y.rows())
        .map(|i| Ok(tape.constant(preprocess_gradient(y.row(i), DEFAULT_SCALE)?.to_tensor())))
        .collect()
}

/// One forward step; returns the `N x 1` direction and the next state.
pub(crate) fn forward(tape: &mut Tape, net: &NetVars, ones: Var, inputs: &[Var], state: &StateVars) -> Result<(Var, StateVars)> {
    let mut specific_h = Vec::with_capacity(inputs.len());
    let mut specific_c = Vec::with_capacity(inputs.len());
    for (i, s) in inputs.iter().enumerate() {
        let (h, c) = lstm_cell_taped(tape, ones, *s, state.specific_h[i], state.specific_c[i], &net.specific[i])?;
        specific_h.push(h);
        specific_c.push(c);
    }
    let shared_in = tape.concat(&specific_h)?;
    let (shared_h, shared_c) = lstm_cell_taped(tape, ones, shared_in, state.shared_h, state.shared_c, &net.shared)?;
    let lin = tape.matmul(shared_h, net.head_w)?;
    let bias = tape.matmul(ones, net.head_b)?;
    let g = tape.add(lin, bias)?;
    Ok((
        g,
        StateVars {
            specific_h,
            specific_c,
            shared_h,
            shared_c,
        },
    ))
}

/// Update direction `g_k` for the gradient rows `y`, advancing `state`.
pub fn ml2o_direction(y: &GradientMatrix, state: &Ml2oState, params: &Ml2oParams) -> Result<(Vec<f64>, Ml2oState)> {
    if y.rows() != params.m {
        return Err(Error::shape(
            "ml2o_direction",
            format!("{} gradient rows for a {}-objective optimizer", y.rows(), params.m),
        ));
    }
    let n = y.cols();
    state.check(params, n)?;
    let mut tape = Tape::new();
    let net = bind(&mut tape, params, false)?;
    let ones = tape.constant(Tensor::filled(&[n, 1], 1.0));
    let inputs = encode_inputs(&mut tape, y)?;
    let sv = StateVars::constants(&mut tape, state);
    let (g, next) = forward(&mut tape, &net, ones, &inputs, &sv)?;
    Ok((tape.value(g).data().to_vec(), next.values(&tape)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn preprocess_examples() {
        let p = preprocess_gradient(&[1.0, 0.0, (-10f64).exp(), -2.0], 10.0).unwrap();
        assert_eq!(p.channels[0], [0.0, 1.0]);
        assert_eq!(p.channels[1], [-1.0, 0.0]);
        assert!((p.channels[2][0] + 1.0).abs() < 1e-15 && p.channels[2][1] == 1.0);
        assert!((p.channels[3][0] - 2f64.ln() / 10.0).abs() < 1e-16 && p.channels[3][1] == -1.0);
        assert!(preprocess_gradient(&[1.0], 0.0).is_err());
    }

    #[test]
    fn zero_cell_gates() {
        let params = LstmCellParams::zeros(2, 3);
        let s = Tensor::zeros(&[4, 2]);
        let h = Tensor::zeros(&[4, 3]);
        let (h2, c2) = lstm_cell(&s, (&h, &h), &params).unwrap();
        assert!(h2.data().iter().all(|v| *v == 0.0));
        assert!(c2.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let hidden = 2;
        let mut params = LstmCellParams::zeros(1, hidden);
        params.b_x.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = 50.0);
        params.b_x.data_mut()[2 * hidden..3 * hidden].iter_mut().for_each(|b| *b = 0.3);
        let s = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let h = Tensor::zeros(&[1, hidden]);
        let c = Tensor::matrix(1, hidden, vec![0.7, -1.2]).unwrap();
        let (_, c2) = lstm_cell(&s, (&h, &c), &params).unwrap();
        let write = 0.5 * 0.3f64.tanh();
        assert!((c2.data()[0] - (0.7 + write)).abs() < 1e-10);
        assert!((c2.data()[1] - (-1.2 + write)).abs() < 1e-10);
    }

    #[test]
    fn cell_shape_mismatch() {
        let params = LstmCellParams::zeros(2, 3);
        let s = Tensor::zeros(&[4, 3]);
        let h = Tensor::zeros(&[4, 3]);
        assert!(lstm_cell(&s, (&h, &h), &params).is_err());
    }

    #[test]
    fn zero_params_emit_head_bias() {
        let mut params = Ml2oParams::zeros(2, 3).unwrap();
        params.set("head.b", Tensor::matrix(1, 1, vec![0.25]).unwrap()).unwrap();
        let y = GradientMatrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.1, 0.0, 3.0]]).unwrap();
        let state = Ml2oState::zeros(&params, 3);
        let (g, _) = ml2o_direction(&y, &state, &params).unwrap();
        assert_eq!(g, vec![0.25; 3]);
    }

    #[test]
    fn identical_coordinates_give_identical_outputs() {
        let params = Ml2oParams::random(2, 4, &mut seeded(3)).unwrap();
        let y = GradientMatrix::from_rows(&[vec![0.4, 0.4, -1.0], vec![2.0, 2.0, 0.1]]).unwrap();
        let state = Ml2oState::zeros(&params, 3);
        let (g, next) = ml2o_direction(&y, &state, &params).unwrap();
        assert_eq!(g[0], g[1]);
        assert_ne!(g[0], g[2]);
        let (g2, _) = ml2o_direction(&y, &next, &params).unwrap();
        assert_eq!(g2[0], g2[1]);
    }

    #[test]
    fn wrong_objective_count_rejected() {
        let params = Ml2oParams::zeros(3, 2).unwrap();
        let y = GradientMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let state = Ml2oState::zeros(&params, 1);
        assert!(ml2o_direction(&y, &state, &params).is_err());
    }
}
