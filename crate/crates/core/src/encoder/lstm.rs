//! LSTM cell forward pass, recorded tape and backpropagation through time.

use super::EncoderModel;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn new(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Gate pre-activations `b + Wxᵀx + Whᵀh` into `pre`.
fn preactivate<T: Scalar>(m: &EncoderModel<T>, x: &[T], h: &[T], pre: &mut [T]) {
    let l = &m.layout;
    let g = l.gates();
    pre.copy_from_slice(m.p(l.b()));
    let wx = m.p(l.wx());
    for (k, &xk) in x.iter().enumerate() {
        axpy(xk, &wx[k * g..(k + 1) * g], pre);
    }
    let wh = m.p(l.wh());
    for (j, &hj) in h.iter().enumerate() {
        axpy(hj, &wh[j * g..(j + 1) * g], pre);
    }
}

/// Activates gates in place: i, f, o through the logistic, g through tanh.
fn activate<T: Scalar>(pre: &mut [T], hidden: usize) {
    for (r, v) in pre.iter_mut().enumerate() {
        *v = if (2 * hidden..3 * hidden).contains(&r) {
            v.tanh()
        } else {
            sigmoid(*v)
        };
    }
}

impl<T: Scalar> EncoderModel<T> {
    /// Advances `state` by one input step.
    pub fn step(&self, state: &mut LstmState<T>, x: &[T]) {
        let hd = self.layout.hidden;
        let mut gates = vec![T::zero(); self.layout.gates()];
        preactivate(self, x, &state.h, &mut gates);
        activate(&mut gates, hd);
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            state.c[j] = f * state.c[j] + i * g;
            state.h[j] = o * state.c[j].tanh();
        }
    }
}

/// Everything the backward pass needs from one forward run over a window.
/// Row `t` of each buffer belongs to step `t`.
#[derive(Clone, Debug, Default)]
pub(crate) struct Tape<T> {
    steps: usize,
    /// `h` before each step; row `steps` is the final hidden state.
    h: Vec<T>,
    /// `c` before each step; row `steps` is the final cell state.
    c: Vec<T>,
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

impl<T: Scalar> Tape<T> {
    pub(crate) fn final_h(&self, hidden: usize) -> &[T] {
        &self.h[self.steps * hidden..(self.steps + 1) * hidden]
    }
}

/// Forward pass over `x` (`steps × inputs`, row-major) from a zero state,
/// recording into `tape`.
pub(crate) fn forward_tape<T: Scalar>(m: &EncoderModel<T>, x: &[T], tape: &mut Tape<T>) {
    let hd = m.layout.hidden;
    let g4 = m.layout.gates();
    let steps = x.len() / m.layout.inputs;
    tape.steps = steps;
    tape.h.clear();
    tape.h.resize((steps + 1) * hd, T::zero());
    tape.c.clear();
    tape.c.resize((steps + 1) * hd, T::zero());
    tape.gates.clear();
    tape.gates.resize(steps * g4, T::zero());
    tape.tanh_c.clear();
    tape.tanh_c.resize(steps * hd, T::zero());
    for (t, xt) in x.chunks_exact(m.layout.inputs).enumerate() {
        let (h_prev, h_next) = tape.h.split_at_mut((t + 1) * hd);
        let h_prev = &h_prev[t * hd..];
        let gates = &mut tape.gates[t * g4..(t + 1) * g4];
        preactivate(m, xt, h_prev, gates);
        activate(gates, hd);
        let (c_prev, c_next) = tape.c.split_at_mut((t + 1) * hd);
        let c_prev = &c_prev[t * hd..];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            c_next[j] = c;
            tape.tanh_c[t * hd + j] = tc;
            h_next[j] = o * tc;
        }
    }
}

/// Scratch buffers reused across backward calls.
#[derive(Clone, Debug, Default)]
pub(crate) struct Scratch<T> {
    dh: Vec<T>,
    dc: Vec<T>,
    dpre: Vec<T>,
}

/// Accumulates into `grad` the gradient of a loss whose derivative with
/// respect to the final hidden state is `dh_final`.
///
/// `drop_forget_slope` omits the `f(1 − f)` factor of the forget gate, a
/// known-wrong gradient used as a negative control.
pub(crate) fn backward<T: Scalar>(
    m: &EncoderModel<T>,
    x: &[T],
    tape: &Tape<T>,
    dh_final: &[T],
    grad: &mut [T],
    scratch: &mut Scratch<T>,
    drop_forget_slope: bool,
) {
    let l = m.layout;
    let hd = l.hidden;
    let g4 = l.gates();
    let wh = m.p(l.wh());
    scratch.dh.clear();
    scratch.dh.extend_from_slice(dh_final);
    scratch.dc.clear();
    scratch.dc.resize(hd, T::zero());
    scratch.dpre.resize(g4, T::zero());
    let one = T::one();
    let (gwx, rest) = grad[l.wx().start..].split_at_mut(l.wx().len());
    let (gwh, rest) = rest.split_at_mut(l.wh().len());
    let gb = &mut rest[..g4];
    for t in (0..tape.steps).rev() {
        let gates = &tape.gates[t * g4..(t + 1) * g4];
        let c_prev = &tape.c[t * hd..(t + 1) * hd];
        let tanh_c = &tape.tanh_c[t * hd..(t + 1) * hd];
        let dpre = &mut scratch.dpre;
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            let dh = scratch.dh[j];
            let tc = tanh_c[j];
            let dc = scratch.dc[j] + dh * o * (one - tc * tc);
            dpre[j] = dc * g * i * (one - i);
            let df = dc * c_prev[j];
            dpre[hd + j] = if drop_forget_slope { df } else { df * f * (one - f) };
            dpre[2 * hd + j] = dc * i * (one - g * g);
            dpre[3 * hd + j] = dh * tc * o * (one - o);
            scratch.dc[j] = dc * f;
        }
        let xt = &x[t * l.inputs..(t + 1) * l.inputs];
        for (k, &xk) in xt.iter().enumerate() {
            axpy(xk, dpre, &mut gwx[k * g4..(k + 1) * g4]);
        }
        let h_prev = &tape.h[t * hd..(t + 1) * hd];
        for (j, &hj) in h_prev.iter().enumerate() {
            axpy(hj, dpre, &mut gwh[j * g4..(j + 1) * g4]);
        }
        for (b, &d) in gb.iter_mut().zip(dpre.iter()) {
            *b += d;
        }
        for j in 0..hd {
            scratch.dh[j] = dot(&wh[j * g4..(j + 1) * g4], dpre);
        }
    }
}
