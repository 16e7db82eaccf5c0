//! Fused LSTM layer with masked state carry and hand-written BPTT.
//!
//! Padded steps (mask 0) carry the hidden and cell state through unchanged,
//! so outputs at valid positions do not depend on how much padding a batch
//! happens to contain, in either direction.

use super::tape::{to_standard, Tape, Var};
use super::Scalar;
use ndarray::{s, Array1, Array2, Array3, Axis, Ix2, Ix3};

impl<F: Scalar> Tape<F> {
    /// One LSTM direction over a [T, B, d_in] sequence.
    ///
    /// `wx`: [d_in, 4H], `wh`: [H, 4H], `b`: [4H] with gate order i, f, g, o.
    /// `mask`: [T, B] with 1 at valid positions. Returns h: [T, B, H].
    pub fn lstm_layer(
        &mut self,
        x: Var,
        wx: Var,
        wh: Var,
        b: Var,
        mask: &Array2<F>,
        reverse: bool,
    ) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("lstm input must be [T,B,d]");
        let (t_len, batch, d_in) = xv.dim();
        let wxv = self.value(wx).view().into_dimensionality::<Ix2>().unwrap();
        let whv = self.value(wh).view().into_dimensionality::<Ix2>().unwrap();
        assert!(
            wxv.dim().0 == d_in && wxv.dim().1 % 4 == 0,
            "lstm_layer: shape mismatch between input {:?} and wx {:?}",
            xv.dim(),
            wxv.dim()
        );
        let hidden = wxv.dim().1 / 4;
        assert!(
            whv.dim() == (hidden, 4 * hidden),
            "lstm_layer: shape mismatch between wx {:?} and wh {:?}",
            wxv.dim(),
            whv.dim()
        );
        assert!(
            mask.dim() == (t_len, batch),
            "lstm_layer: mask shape {:?} does not match input {:?}",
            mask.dim(),
            xv.dim()
        );

        // input contribution for the whole sequence in one gemm
        let x2 = xv.into_shape_with_order((t_len * batch, d_in)).unwrap();
        let mut pre = x2.dot(&wxv);
        let bv = self.value(b).view().into_dimensionality::<ndarray::Ix1>().unwrap();
        pre += &bv;
        let pre = pre.into_shape_with_order((t_len, batch, 4 * hidden)).unwrap();

        let mut gates = Array3::<F>::zeros((t_len, batch, 4 * hidden));
        let mut c_premask = Array3::<F>::zeros((t_len, batch, hidden));
        let mut c_post = Array3::<F>::zeros((t_len, batch, hidden));
        let mut h_out = Array3::<F>::zeros((t_len, batch, hidden));

        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };

        let mut h_prev = Array2::<F>::zeros((batch, hidden));
        let mut c_prev = Array2::<F>::zeros((batch, hidden));
        let one = F::one();
        for &t in &order {
            let mut g_t = pre.index_axis(Axis(0), t).to_owned();
            g_t += &h_prev.dot(&whv);
            // activations: i, f, o sigmoid; g tanh
            for bi in 0..batch {
                for j in 0..4 * hidden {
                    let v = g_t[[bi, j]];
                    g_t[[bi, j]] = if (2 * hidden..3 * hidden).contains(&j) {
                        v.tanh()
                    } else {
                        one / (one + (-v).exp())
                    };
                }
            }
            let i_g = g_t.slice(s![.., 0..hidden]);
            let f_g = g_t.slice(s![.., hidden..2 * hidden]);
            let g_g = g_t.slice(s![.., 2 * hidden..3 * hidden]);
            let o_g = g_t.slice(s![.., 3 * hidden..4 * hidden]);

            let c_new = &(&f_g * &c_prev) + &(&i_g * &g_g);
            let h_new = &o_g.to_owned() * &c_new.mapv(|v| v.tanh());

            let mut h_t = Array2::<F>::zeros((batch, hidden));
            let mut c_t = Array2::<F>::zeros((batch, hidden));
            for bi in 0..batch {
                let m = mask[[t, bi]];
                let inv = one - m;
                for j in 0..hidden {
                    h_t[[bi, j]] = m * h_new[[bi, j]] + inv * h_prev[[bi, j]];
                    c_t[[bi, j]] = m * c_new[[bi, j]] + inv * c_prev[[bi, j]];
                }
            }

            gates.index_axis_mut(Axis(0), t).assign(&g_t);
            c_premask.index_axis_mut(Axis(0), t).assign(&c_new);
            c_post.index_axis_mut(Axis(0), t).assign(&c_t);
            h_out.index_axis_mut(Axis(0), t).assign(&h_t);
            h_prev = h_t;
            c_prev = c_t;
        }

        let rg = [x, wx, wh, b].iter().any(|v| self.requires_grad_of(*v));
        let mask = mask.clone();
        let out = Var(self.len());
        self.push(
            to_standard(h_out),
            rg,
            Some(Box::new(move |g, vals, sink| {
                let gy = g.view().into_dimensionality::<Ix3>().unwrap();
                let xv = vals[x.0].view().into_dimensionality::<Ix3>().unwrap();
                let wxv = vals[wx.0].view().into_dimensionality::<Ix2>().unwrap();
                let whv = vals[wh.0].view().into_dimensionality::<Ix2>().unwrap();

                let mut dpre = Array3::<F>::zeros((t_len, batch, 4 * hidden));
                let mut dwh = Array2::<F>::zeros((hidden, 4 * hidden));
                let mut dh_carry = Array2::<F>::zeros((batch, hidden));
                let mut dc_carry = Array2::<F>::zeros((batch, hidden));
                let one = F::one();

                for &t in order.iter().rev() {
                    let prev_t: Option<usize> = if reverse {
                        if t + 1 < t_len { Some(t + 1) } else { None }
                    } else {
                        t.checked_sub(1)
                    };
                    let g_t = gates.index_axis(Axis(0), t);
                    let c_new = c_premask.index_axis(Axis(0), t);
                    let tc = c_new.mapv(|v| v.tanh());

                    let mut dgates_t = Array2::<F>::zeros((batch, 4 * hidden));
                    let mut dh_prev = Array2::<F>::zeros((batch, hidden));
                    let mut dc_prev = Array2::<F>::zeros((batch, hidden));
                    for bi in 0..batch {
                        let m = mask[[t, bi]];
                        let inv = one - m;
                        for j in 0..hidden {
                            let dh_total = gy[[t, bi, j]] + dh_carry[[bi, j]];
                            let dc_total = dc_carry[[bi, j]];
                            let dh_new = m * dh_total;
                            dh_prev[[bi, j]] = inv * dh_total;
                            let mut dc_new = m * dc_total;
                            dc_prev[[bi, j]] = inv * dc_total;

                            let i_v = g_t[[bi, j]];
                            let f_v = g_t[[bi, hidden + j]];
                            let g_v = g_t[[bi, 2 * hidden + j]];
                            let o_v = g_t[[bi, 3 * hidden + j]];
                            let tc_v = tc[[bi, j]];

                            let d_o = dh_new * tc_v;
                            dc_new = dc_new + dh_new * o_v * (one - tc_v * tc_v);

                            let c_prev_v = match prev_t {
                                Some(pt) => c_post[[pt, bi, j]],
                                None => F::zero(),
                            };
                            let d_i = dc_new * g_v;
                            let d_f = dc_new * c_prev_v;
                            let d_g = dc_new * i_v;
                            dc_prev[[bi, j]] += dc_new * f_v;

                            dgates_t[[bi, j]] = d_i * i_v * (one - i_v);
                            dgates_t[[bi, hidden + j]] = d_f * f_v * (one - f_v);
                            dgates_t[[bi, 2 * hidden + j]] = d_g * (one - g_v * g_v);
                            dgates_t[[bi, 3 * hidden + j]] = d_o * o_v * (one - o_v);
                        }
                    }

                    let h_prev_t: Array2<F> = match prev_t {
                        Some(pt) => vals[out.0]
                            .view()
                            .into_dimensionality::<Ix3>()
                            .unwrap()
                            .index_axis(Axis(0), pt)
                            .to_owned(),
                        None => Array2::zeros((batch, hidden)),
                    };
                    dwh += &h_prev_t.t().dot(&dgates_t);
                    dh_prev += &dgates_t.dot(&whv.t());

                    dpre.index_axis_mut(Axis(0), t).assign(&dgates_t);
                    dh_carry = dh_prev;
                    dc_carry = dc_prev;
                }

                let dpre2 = dpre
                    .into_shape_with_order((t_len * batch, 4 * hidden))
                    .unwrap();
                if sink.wants(x) {
                    let x_shape = vals[x.0].raw_dim();
                    let dx = dpre2.dot(&wxv.t());
                    sink.add(x, dx.into_dyn().into_shape_with_order(x_shape).unwrap());
                }
                if sink.wants(wx) {
                    let x2 = xv.into_shape_with_order((t_len * batch, d_in)).unwrap();
                    sink.add(wx, x2.t().dot(&dpre2).into_dyn());
                }
                if sink.wants(wh) {
                    sink.add(wh, dwh.into_dyn());
                }
                if sink.wants(b) {
                    let db: Array1<F> = dpre2.sum_axis(Axis(0));
                    sink.add(b, db.into_dyn());
                }
            })),
        )
    }

    /// Forward and backward directions concatenated on the feature axis:
    /// [T, B, d_in] -> [T, B, 2H].
    #[allow(clippy::too_many_arguments)]
    pub fn bidirectional_lstm(
        &mut self,
        x: Var,
        wx_f: Var,
        wh_f: Var,
        b_f: Var,
        wx_b: Var,
        wh_b: Var,
        b_b: Var,
        mask: &Array2<F>,
    ) -> Var {
        let fwd = self.lstm_layer(x, wx_f, wh_f, b_f, mask, false);
        let bwd = self.lstm_layer(x, wx_b, wh_b, b_b, mask, true);
        self.concat(2, &[fwd, bwd])
    }
}
