//! Op constructors. Each appends a node holding the forward value and a
//! closure computing parent gradients from the output gradient.
//!
//! Shape agreement here is asserted, not surfaced as `Result`: graphs are
//! built by module code whose public entry points validate dimensions.

use super::kernels::{self, Pad};
use super::{Graph, Var};
use crate::kan::{KanLayer, KanLayerShape};
use crate::scalar::{sigmoid, silu, silu_deriv, Scalar};
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    fn unary(
        &mut self,
        a: Var,
        value: Tensor<T>,
        back: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Tensor<T> + 'static,
    ) -> Var {
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g, pv, out| vec![Some(back(g, pv[0], out))])),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(va.shape(), data).unwrap();
        self.push(
            value,
            vec![a, b],
            Some(Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::from_vec(va.shape(), data).unwrap();
        self.push(
            value,
            vec![a, b],
            Some(Box::new(|g, _, _| {
                vec![Some(g.clone()), Some(g.map(|v| -v))]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_vec(va.shape(), data).unwrap();
        self.push(
            value,
            vec![a, b],
            Some(Box::new(|g, pv, _| {
                let ga = g.data().iter().zip(pv[1].data()).map(|(&x, &y)| x * y).collect();
                let gb = g.data().iter().zip(pv[0].data()).map(|(&x, &y)| x * y).collect();
                vec![
                    Some(Tensor::from_vec(g.shape(), ga).unwrap()),
                    Some(Tensor::from_vec(g.shape(), gb).unwrap()),
                ]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v * c);
        self.unary(a, value, move |g, _, _| g.map(|v| v * c))
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.unary(a, value, |g, _, _| g.clone())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.unary(a, value, |g, _, out| {
            let data = g
                .data()
                .iter()
                .zip(out.data())
                .map(|(&gv, &y)| gv * y * (T::one() - y))
                .collect();
            Tensor::from_vec(g.shape(), data).unwrap()
        })
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(silu);
        self.unary(a, value, |g, x, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| gv * silu_deriv(xv))
                .collect();
            Tensor::from_vec(g.shape(), data).unwrap()
        })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        let value = self.value(a).map(|v| if v > T::zero() { v } else { v * s });
        self.unary(a, value, move |g, x, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * s })
                .collect();
            Tensor::from_vec(g.shape(), data).unwrap()
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.unary(a, value, |g, x, _| {
            let two = T::from_f64(2.0);
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| gv * two * xv)
                .collect();
            Tensor::from_vec(g.shape(), data).unwrap()
        })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.abs());
        self.unary(a, value, |g, x, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| gv * T::from_f64(xv.as_f64().signum() * ((xv != T::zero()) as i32 as f64)))
                .collect();
            Tensor::from_vec(g.shape(), data).unwrap()
        })
    }

    /// Clamp to [0, 1]; gradient passes through the interior only.
    pub fn clamp01(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(T::zero()).min(T::one()));
        self.unary(a, value, |g, x, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| {
                    if xv >= T::zero() && xv <= T::one() {
                        gv
                    } else {
                        T::zero()
                    }
                })
                .collect();
            Tensor::from_vec(g.shape(), data).unwrap()
        })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.numel();
        assert!(n > 0, "mean of empty tensor");
        let mean = va.data().iter().copied().sum::<T>() / T::from_f64(n as f64);
        let shape = va.shape().to_vec();
        self.unary(a, Tensor::scalar(mean), move |g, _, _| {
            Tensor::full(&shape, g.data()[0] / T::from_f64(n as f64))
        })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let total = va.data().iter().copied().sum::<T>();
        let shape = va.shape().to_vec();
        self.unary(a, Tensor::scalar(total), move |g, _, _| {
            Tensor::full(&shape, g.data()[0])
        })
    }

    /// Mean squared difference, as a scalar node.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let s = self.square(d);
        self.mean_all(s)
    }

    /// Mean absolute difference, as a scalar node.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let s = self.abs(d);
        self.mean_all(s)
    }

    /// Dense conv, NCHW, odd kernel, symmetric padding k/2.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: Pad) -> Var {
        let (n, ci, h, wd) = self.value(x).dims4().expect("conv input");
        let wshape = self.value(w).shape().to_vec();
        assert_eq!(wshape.len(), 4, "conv weight must be [Co, Ci, k, k]");
        let (co, wci, k) = (wshape[0], wshape[1], wshape[2]);
        assert_eq!(wshape[2], wshape[3], "conv kernel must be square");
        assert_eq!(wci, ci, "conv channel mismatch");
        assert_eq!(k % 2, 1, "conv kernel must be odd");
        let (ho, wo) = (
            kernels::conv_out_dim(h, k, stride),
            kernels::conv_out_dim(wd, k, stride),
        );

        let mut out = vec![T::zero(); n * co * ho * wo];
        {
            let bias = b.map(|bv| self.value(bv).data().to_vec());
            kernels::conv2d_fwd(
                self.value(x).data(),
                n,
                ci,
                h,
                wd,
                self.value(w).data(),
                co,
                k,
                bias.as_deref(),
                stride,
                pad,
                &mut out,
            );
        }
        let value = Tensor::from_vec(&[n, co, ho, wo], out).unwrap();

        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        let has_bias = b.is_some();
        self.push(
            value,
            parents,
            Some(Box::new(move |g, pv, _| {
                let mut gx = vec![T::zero(); n * ci * h * wd];
                let mut gw = vec![T::zero(); co * ci * k * k];
                let mut gb = if has_bias { vec![T::zero(); co] } else { vec![] };
                kernels::conv2d_bwd(
                    pv[0].data(),
                    n,
                    ci,
                    h,
                    wd,
                    pv[1].data(),
                    co,
                    k,
                    stride,
                    pad,
                    g.data(),
                    &mut gx,
                    &mut gw,
                    &mut gb,
                );
                let mut grads = vec![
                    Some(Tensor::from_vec(&[n, ci, h, wd], gx).unwrap()),
                    Some(Tensor::from_vec(&[co, ci, k, k], gw).unwrap()),
                ];
                if has_bias {
                    grads.push(Some(Tensor::from_vec(&[co], gb).unwrap()));
                }
                grads
            })),
        )
    }

    /// Depthwise conv: weight [C, k, k], one kernel per channel, stride 1.
    pub fn dwconv2d(&mut self, x: Var, w: Var, pad: Pad) -> Var {
        let (n, ch, h, wd) = self.value(x).dims4().expect("dwconv input");
        let wshape = self.value(w).shape().to_vec();
        assert_eq!(wshape.len(), 3, "depthwise weight must be [C, k, k]");
        assert_eq!(wshape[0], ch, "depthwise channel mismatch");
        let k = wshape[1];
        assert_eq!(wshape[1], wshape[2]);
        assert_eq!(k % 2, 1);

        let mut out = vec![T::zero(); n * ch * h * wd];
        kernels::dwconv2d_fwd(
            self.value(x).data(),
            n,
            ch,
            h,
            wd,
            self.value(w).data(),
            k,
            pad,
            &mut out,
        );
        let value = Tensor::from_vec(&[n, ch, h, wd], out).unwrap();
        self.push(
            value,
            vec![x, w],
            Some(Box::new(move |g, pv, _| {
                let mut gx = vec![T::zero(); n * ch * h * wd];
                let mut gw = vec![T::zero(); ch * k * k];
                kernels::dwconv2d_bwd(
                    pv[0].data(),
                    n,
                    ch,
                    h,
                    wd,
                    pv[1].data(),
                    k,
                    pad,
                    g.data(),
                    &mut gx,
                    &mut gw,
                );
                vec![
                    Some(Tensor::from_vec(&[n, ch, h, wd], gx).unwrap()),
                    Some(Tensor::from_vec(&[ch, k, k], gw).unwrap()),
                ]
            })),
        )
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("upsample input");
        let mut out = vec![T::zero(); n * c * 4 * h * w];
        kernels::upsample2x_fwd(self.value(x).data(), n, c, h, w, &mut out);
        let value = Tensor::from_vec(&[n, c, 2 * h, 2 * w], out).unwrap();
        self.unary(x, value, move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            kernels::upsample2x_bwd(g.data(), n, c, h, w, &mut gx);
            Tensor::from_vec(&[n, c, h, w], gx).unwrap()
        })
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (n, _, h, w) = self.value(parts[0]).dims4().expect("concat input");
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4().expect("concat input");
            assert_eq!((pn, ph, pw), (n, h, w), "concat spatial mismatch");
            chans.push(pc);
        }
        let ctot: usize = chans.iter().sum();
        let mut out = vec![T::zero(); n * ctot * h * w];
        let plane = h * w;
        for ni in 0..n {
            let mut coff = 0;
            for (&p, &pc) in parts.iter().zip(&chans) {
                let src = self.value(p).data();
                out[(ni * ctot + coff) * plane..(ni * ctot + coff + pc) * plane]
                    .copy_from_slice(&src[ni * pc * plane..(ni + 1) * pc * plane]);
                coff += pc;
            }
        }
        let value = Tensor::from_vec(&[n, ctot, h, w], out).unwrap();
        let chans_b = chans.clone();
        self.push(
            value,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let gd = g.data();
                let mut grads = Vec::with_capacity(chans_b.len());
                let mut coff = 0;
                for &pc in &chans_b {
                    let mut gp = vec![T::zero(); n * pc * plane];
                    for ni in 0..n {
                        gp[ni * pc * plane..(ni + 1) * pc * plane].copy_from_slice(
                            &gd[(ni * ctot + coff) * plane..(ni * ctot + coff + pc) * plane],
                        );
                    }
                    grads.push(Some(Tensor::from_vec(&[n, pc, h, w], gp).unwrap()));
                    coff += pc;
                }
                grads
            })),
        )
    }

    /// Concatenate [B, F_i] tensors along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (b, _) = self.value(parts[0]).dims2().expect("concat_cols input");
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pb, pf) = self.value(p).dims2().expect("concat_cols input");
            assert_eq!(pb, b, "concat_cols batch mismatch");
            widths.push(pf);
        }
        let ftot: usize = widths.iter().sum();
        let mut out = vec![T::zero(); b * ftot];
        for bi in 0..b {
            let mut off = 0;
            for (&p, &pf) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                out[bi * ftot + off..bi * ftot + off + pf]
                    .copy_from_slice(&src[bi * pf..(bi + 1) * pf]);
                off += pf;
            }
        }
        let value = Tensor::from_vec(&[b, ftot], out).unwrap();
        let widths_b = widths.clone();
        self.push(
            value,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let gd = g.data();
                let mut grads = Vec::with_capacity(widths_b.len());
                let mut off = 0;
                for &pf in &widths_b {
                    let mut gp = vec![T::zero(); b * pf];
                    for bi in 0..b {
                        gp[bi * pf..(bi + 1) * pf]
                            .copy_from_slice(&gd[bi * ftot + off..bi * ftot + off + pf]);
                    }
                    grads.push(Some(Tensor::from_vec(&[b, pf], gp).unwrap()));
                    off += pf;
                }
                grads
            })),
        )
    }

    /// Neighborhood concat with replicate borders:
    /// [N, C, H, W] -> [N, C*(2r+1)^2, H, W].
    pub fn unfold(&mut self, x: Var, radius: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("unfold input");
        let win = 2 * radius + 1;
        let mut out = vec![T::zero(); n * c * win * win * h * w];
        kernels::unfold_fwd(self.value(x).data(), n, c, h, w, radius, &mut out);
        let value = Tensor::from_vec(&[n, c * win * win, h, w], out).unwrap();
        self.unary(x, value, move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            kernels::unfold_bwd(n, c, h, w, radius, g.data(), &mut gx);
            Tensor::from_vec(&[n, c, h, w], gx).unwrap()
        })
    }

    /// [N, C, H, W] -> [N*H*W, C]: pixels become batch rows.
    pub fn nchw_to_rows(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("nchw_to_rows input");
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * h * w * c];
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        out[((ni * h + y) * w + xx) * c + ci] = src[((ni * c + ci) * h + y) * w + xx];
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[n * h * w, c], out).unwrap();
        self.unary(x, value, move |g, _, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); n * c * h * w];
            for ni in 0..n {
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[((ni * c + ci) * h + y) * w + xx] =
                                gd[((ni * h + y) * w + xx) * c + ci];
                        }
                    }
                }
            }
            Tensor::from_vec(&[n, c, h, w], gx).unwrap()
        })
    }

    /// Inverse of [`Graph::nchw_to_rows`].
    pub fn rows_to_nchw(&mut self, x: Var, n: usize, h: usize, w: usize) -> Var {
        let (rows, c) = self.value(x).dims2().expect("rows_to_nchw input");
        assert_eq!(rows, n * h * w, "row count mismatch");
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * h * w];
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        out[((ni * c + ci) * h + y) * w + xx] = src[((ni * h + y) * w + xx) * c + ci];
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, h, w], out).unwrap();
        self.unary(x, value, move |g, _, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); n * h * w * c];
            for ni in 0..n {
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[((ni * h + y) * w + xx) * c + ci] =
                                gd[((ni * c + ci) * h + y) * w + xx];
                        }
                    }
                }
            }
            Tensor::from_vec(&[n * h * w, c], gx).unwrap()
        })
    }

    /// [B, I] x [I, O] -> [B, O]
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (b, i) = self.value(x).dims2().expect("matmul lhs");
        let (wi, o) = self.value(w).dims2().expect("matmul rhs");
        assert_eq!(i, wi, "matmul inner dim mismatch");
        let mut out = vec![T::zero(); b * o];
        kernels::matmul_fwd(self.value(x).data(), b, i, self.value(w).data(), o, &mut out);
        let value = Tensor::from_vec(&[b, o], out).unwrap();
        self.push(
            value,
            vec![x, w],
            Some(Box::new(move |g, pv, _| {
                let mut gx = vec![T::zero(); b * i];
                let mut gw = vec![T::zero(); i * o];
                kernels::matmul_bwd(pv[0].data(), b, i, pv[1].data(), o, g.data(), &mut gx, &mut gw);
                vec![
                    Some(Tensor::from_vec(&[b, i], gx).unwrap()),
                    Some(Tensor::from_vec(&[i, o], gw).unwrap()),
                ]
            })),
        )
    }

    /// Add a bias row to every row of [B, O].
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let (b, o) = self.value(x).dims2().expect("add_row_bias input");
        assert_eq!(self.value(bias).shape(), &[o], "bias width mismatch");
        let bd = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for bi in 0..b {
            for (v, &bv) in out[bi * o..(bi + 1) * o].iter_mut().zip(&bd) {
                *v += bv;
            }
        }
        let value = Tensor::from_vec(&[b, o], out).unwrap();
        self.push(
            value,
            vec![x, bias],
            Some(Box::new(move |g, _, _| {
                let gd = g.data();
                let mut gb = vec![T::zero(); o];
                for bi in 0..b {
                    for (gbv, &gv) in gb.iter_mut().zip(&gd[bi * o..(bi + 1) * o]) {
                        *gbv += gv;
                    }
                }
                vec![Some(g.clone()), Some(Tensor::from_vec(&[o], gb).unwrap())]
            })),
        )
    }

    /// KAN layer application over batch rows. Parameter tensors use the
    /// layer's flat layouts; `shape` supplies dimensions and the uniform grid.
    pub fn kan_layer(&mut self, x: Var, coeffs: Var, base: Var, spline: Var, shape: KanLayerShape) -> Var {
        let (b, w) = self.value(x).dims2().expect("kan input");
        assert_eq!(w, shape.n_in, "kan input width mismatch");
        let (n_in, n_out, order) = (shape.n_in, shape.n_out, shape.order);
        let knots: Vec<T> = shape.knots();

        let layer = KanLayer::from_parts(
            n_in,
            n_out,
            order,
            knots,
            self.value(coeffs).data().to_vec(),
            self.value(base).data().to_vec(),
            self.value(spline).data().to_vec(),
        )
        .expect("parameter tensors match the prototype layer");
        let mut out = vec![T::zero(); b * n_out];
        let mut cache = crate::kan::KanEvalCache::default();
        layer.forward_kernel_cached(self.value(x).data(), b, &mut out, &mut cache);
        let value = Tensor::from_vec(&[b, n_out], out).unwrap();

        self.push(
            value,
            vec![x, coeffs, base, spline],
            Some(Box::new(move |g, pv, _| {
                let mut grads = layer.zero_grads();
                let mut gx = vec![T::zero(); b * n_in];
                layer.backward_kernel_cached(b, g.data(), &mut grads, &mut gx, &cache);
                vec![
                    Some(Tensor::from_vec(&[b, n_in], gx).unwrap()),
                    Some(Tensor::from_vec(pv[1].shape(), grads.coeffs).unwrap()),
                    Some(Tensor::from_vec(pv[2].shape(), grads.base_scale).unwrap()),
                    Some(Tensor::from_vec(pv[3].shape(), grads.spline_scale).unwrap()),
                ]
            })),
        )
    }

    /// Spatial mean per channel: [N, C, H, W] -> [N, C].
    pub fn global_mean_hw(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4().expect("global_mean input");
        let plane = h * w;
        let inv = T::from_f64(1.0 / plane as f64);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        for pc in 0..n * c {
            out[pc] = src[pc * plane..(pc + 1) * plane].iter().copied().sum::<T>() * inv;
        }
        let value = Tensor::from_vec(&[n, c], out).unwrap();
        self.unary(x, value, move |g, _, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); n * c * plane];
            for pc in 0..n * c {
                let gv = gd[pc] * inv;
                gx[pc * plane..(pc + 1) * plane].iter_mut().for_each(|v| *v = gv);
            }
            Tensor::from_vec(&[n, c, h, w], gx).unwrap()
        })
    }

    /// Scattering-model composition: out = j * t + a * (1 - t), with
    /// j `[N,3,H,W]`, t `[N,1,H,W]`, a `[N,3]`.
    pub fn asm_compose(&mut self, j: Var, t: Var, a: Var) -> Var {
        let (n, c, h, w) = self.value(j).dims4().expect("asm_compose image");
        assert_eq!(c, 3);
        assert_eq!(self.value(t).shape(), &[n, 1, h, w], "transmission shape");
        assert_eq!(self.value(a).shape(), &[n, 3], "airlight shape");
        let plane = h * w;
        let (jd, td, ad) = (self.value(j).data(), self.value(t).data(), self.value(a).data());
        let mut out = vec![T::zero(); n * 3 * plane];
        for ni in 0..n {
            let trow = &td[ni * plane..(ni + 1) * plane];
            for ci in 0..3 {
                let av = ad[ni * 3 + ci];
                let jrow = &jd[(ni * 3 + ci) * plane..(ni * 3 + ci + 1) * plane];
                let orow = &mut out[(ni * 3 + ci) * plane..(ni * 3 + ci + 1) * plane];
                for ((o, &jv), &tv) in orow.iter_mut().zip(jrow).zip(trow) {
                    *o = jv * tv + av * (T::one() - tv);
                }
            }
        }
        let value = Tensor::from_vec(&[n, 3, h, w], out).unwrap();
        self.push(
            value,
            vec![j, t, a],
            Some(Box::new(move |g, pv, _| {
                let (jd, td, ad) = (pv[0].data(), pv[1].data(), pv[2].data());
                let gd = g.data();
                let mut gj = vec![T::zero(); n * 3 * plane];
                let mut gt = vec![T::zero(); n * plane];
                let mut ga = vec![T::zero(); n * 3];
                for ni in 0..n {
                    let trow = &td[ni * plane..(ni + 1) * plane];
                    let gtrow = &mut gt[ni * plane..(ni + 1) * plane];
                    for ci in 0..3 {
                        let av = ad[ni * 3 + ci];
                        let base = (ni * 3 + ci) * plane;
                        let grow = &gd[base..base + plane];
                        let jrow = &jd[base..base + plane];
                        let gjrow = &mut gj[base..base + plane];
                        let mut gacc = T::zero();
                        for i in 0..plane {
                            let gv = grow[i];
                            gjrow[i] = gv * trow[i];
                            gtrow[i] += gv * (jrow[i] - av);
                            gacc += gv * (T::one() - trow[i]);
                        }
                        ga[ni * 3 + ci] = gacc;
                    }
                }
                vec![
                    Some(Tensor::from_vec(&[n, 3, h, w], gj).unwrap()),
                    Some(Tensor::from_vec(&[n, 1, h, w], gt).unwrap()),
                    Some(Tensor::from_vec(&[n, 3], ga).unwrap()),
                ]
            })),
        )
    }
}
