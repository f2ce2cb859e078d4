use crate::error::{config, Result};
use crate::ops::sample::Bilerp;
use crate::{Tape, Tensor};

impl Tape {
    /// Backward warp: `out(p) = x(p + flow(p))` with bilinear interpolation.
    ///
    /// `flow` is (B, 2, H, W) with channels (dx, dy) in pixels of `x`. Taps
    /// outside the frame read zero.
    pub fn warp_bilinear(&self, x: &Tensor, flow: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        let [fb, fc, fh, fw] = flow.nchw()?;
        if fc != 2 || (fb, fh, fw) != (b, h, w) {
            return config(format!(
                "warp: flow shape {:?} incompatible with input {:?}",
                flow.shape(),
                x.shape()
            ));
        }
        let plane = h * w;
        let taps = move |fd: &[f32], bi: usize, p: usize| {
            let base = bi * 2 * plane;
            let (y, xx) = (p / w, p % w);
            Bilerp::new(y as f32 + fd[base + plane + p], xx as f32 + fd[base + p], h, w)
        };

        let mut out = vec![0.0f32; x.numel()];
        for bi in 0..b {
            for p in 0..plane {
                let t = taps(flow.data(), bi, p);
                for ci in 0..c {
                    let off = (bi * c + ci) * plane;
                    out[off + p] = t.sample(&x.data()[off..off + plane]);
                }
            }
        }

        let xd = x.shared();
        let fd = flow.shared();
        self.record(x.shape().to_vec(), out, &[x, flow], move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0f32; b * c * plane]);
            let mut gf = needs[1].then(|| vec![0.0f32; b * 2 * plane]);
            for bi in 0..b {
                for p in 0..plane {
                    let t = taps(&fd, bi, p);
                    let (mut sy, mut sx) = (0.0f32, 0.0f32);
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        let gv = g[off + p];
                        if let Some(gx) = gx.as_mut() {
                            t.scatter(&mut gx[off..off + plane], gv);
                        }
                        if gf.is_some() {
                            let (dy, dx) = t.slope(&xd[off..off + plane]);
                            sy += gv * dy;
                            sx += gv * dx;
                        }
                    }
                    if let Some(gf) = gf.as_mut() {
                        let base = bi * 2 * plane;
                        gf[base + p] += sx;
                        gf[base + plane + p] += sy;
                    }
                }
            }
            vec![gx, gf]
        })
    }
}
