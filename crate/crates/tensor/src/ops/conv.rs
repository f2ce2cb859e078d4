use crate::error::{config, Result};
use crate::ops::gemm::gemm;
use crate::{Tape, Tensor};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold one image (cin, h, w) into a (cin·k·k, ho·wo) patch matrix.
fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let n = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back into the image.
fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let n = g.cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    /// 2-D cross-correlation. `weight` is (out, in, k, k), `bias` is (out).
    pub fn conv2d(
        &self,
        x: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let [b, cin, h, w] = x.nchw()?;
        let [cout, wcin, k, k2] = weight.nchw()?;
        if k != k2 {
            return config(format!("conv2d: non-square kernel {k}x{k2}"));
        }
        if wcin != cin {
            return config(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            ));
        }
        if stride == 0 {
            return config("conv2d: stride must be at least 1");
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return config(format!(
                "conv2d: {h}x{w} input with padding {padding} is smaller than kernel {k}"
            ));
        }
        if let Some(bias) = bias {
            if bias.shape() != [cout] {
                return config(format!(
                    "conv2d: bias shape {:?}, expected [{cout}]",
                    bias.shape()
                ));
            }
        }
        let g = ConvGeom {
            cin,
            h,
            w,
            k,
            stride,
            pad: padding,
            ho: (h + 2 * padding - k) / stride + 1,
            wo: (w + 2 * padding - k) / stride + 1,
        };
        let (kk, n) = (g.rows(), g.cols());
        let in_len = cin * h * w;
        let mut out = vec![0.0f32; b * cout * n];
        let mut cols = vec![0.0f32; kk * n];
        for bi in 0..b {
            im2col(&x.data()[bi * in_len..(bi + 1) * in_len], &g, &mut cols);
            let dst = &mut out[bi * cout * n..(bi + 1) * cout * n];
            gemm(cout, kk, n, weight.data(), false, &cols, false, dst, false);
            if let Some(bias) = bias {
                for (o, row) in dst.chunks_mut(n).enumerate() {
                    let bv = bias.data()[o];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        }

        let xd = x.shared();
        let wd = weight.shared();
        let mut inputs = vec![x, weight];
        if let Some(bias) = bias {
            inputs.push(bias);
        }
        self.record(vec![b, cout, g.ho, g.wo], out, &inputs, move |gy, needs| {
            let mut dx = needs[0].then(|| vec![0.0f32; b * in_len]);
            let mut dw = needs[1].then(|| vec![0.0f32; cout * kk]);
            let mut db = needs.get(2).copied().unwrap_or(false).then(|| vec![0.0f32; cout]);
            let mut cols = vec![0.0f32; kk * n];
            let mut dcols = vec![0.0f32; kk * n];
            for bi in 0..b {
                let gy_b = &gy[bi * cout * n..(bi + 1) * cout * n];
                if let Some(dw) = dw.as_mut() {
                    im2col(&xd[bi * in_len..(bi + 1) * in_len], &g, &mut cols);
                    gemm(cout, n, kk, gy_b, false, &cols, true, dw, true);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(kk, cout, n, &wd, true, gy_b, false, &mut dcols, false);
                    col2im(&dcols, &g, &mut dx[bi * in_len..(bi + 1) * in_len]);
                }
                if let Some(db) = db.as_mut() {
                    for (o, row) in gy_b.chunks(n).enumerate() {
                        db[o] += row.iter().sum::<f32>();
                    }
                }
            }
            let mut grads = vec![dx, dw];
            if needs.len() > 2 {
                grads.push(db);
            }
            grads
        })
    }
}
