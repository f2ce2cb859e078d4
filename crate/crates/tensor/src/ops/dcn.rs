//! Lightweight deformable convolution: a 3×3 kernel whose nine taps are all
//! displaced by one offset per output position and scaled by one mask.

use crate::error::{config, Result};
use crate::ops::gemm::gemm;
use crate::ops::sample::Bilerp;
use crate::{Tape, Tensor};

const K: usize = 3;
const TAPS: usize = K * K;

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
}

impl Geom {
    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Sampling footprint of tap `k` for output position `p`.
    fn taps(&self, off: &[f32], p: usize, k: usize) -> Bilerp {
        let n = self.plane();
        let (y, x) = ((p / self.w) as f32, (p % self.w) as f32);
        let (ky, kx) = ((k / K) as f32 - 1.0, (k % K) as f32 - 1.0);
        Bilerp::new(y + ky + off[n + p], x + kx + off[p], self.h, self.w)
    }
}

/// Deformable unfold of one image into a (cin·9, h·w) matrix, mask applied.
fn deform_cols(x: &[f32], off: &[f32], mask: &[f32], g: Geom, cols: &mut [f32]) {
    let n = g.plane();
    for p in 0..n {
        let m = mask[p];
        for k in 0..TAPS {
            let t = g.taps(off, p, k);
            for c in 0..g.cin {
                let v = t.sample(&x[c * n..(c + 1) * n]);
                cols[(c * TAPS + k) * n + p] = m * v;
            }
        }
    }
}

impl Tape {
    /// `out(p) = Σ_k w_k · x(p + p_k + O(p)) · M(p) + bias` over a 3×3 grid.
    ///
    /// `offsets` is (B, 2, H, W) with channels (dx, dy); `masks` is (B, 1, H, W).
    pub fn dcn_lite(
        &self,
        x: &Tensor,
        offsets: &Tensor,
        masks: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
    ) -> Result<Tensor> {
        let [b, cin, h, w] = x.nchw()?;
        let [ob, oc, oh, ow] = offsets.nchw()?;
        let [mb, mc, mh, mw] = masks.nchw()?;
        let [cout, wcin, k1, k2] = weight.nchw()?;
        if oc != 2 || (ob, oh, ow) != (b, h, w) {
            return config(format!(
                "dcn_lite: offsets {:?} incompatible with input {:?}",
                offsets.shape(),
                x.shape()
            ));
        }
        if mc != 1 || (mb, mh, mw) != (b, h, w) {
            return config(format!(
                "dcn_lite: masks {:?} incompatible with input {:?}",
                masks.shape(),
                x.shape()
            ));
        }
        if (k1, k2) != (K, K) || wcin != cin {
            return config(format!(
                "dcn_lite: weight {:?} incompatible with {cin} input channels",
                weight.shape()
            ));
        }
        if bias.shape() != [cout] {
            return config(format!("dcn_lite: bias shape {:?}, expected [{cout}]", bias.shape()));
        }

        let g = Geom { cin, h, w };
        let n = g.plane();
        let kk = cin * TAPS;
        let in_len = cin * n;
        let mut out = vec![0.0f32; b * cout * n];
        let mut cols = vec![0.0f32; kk * n];
        for bi in 0..b {
            deform_cols(
                &x.data()[bi * in_len..(bi + 1) * in_len],
                &offsets.data()[bi * 2 * n..(bi + 1) * 2 * n],
                &masks.data()[bi * n..(bi + 1) * n],
                g,
                &mut cols,
            );
            let dst = &mut out[bi * cout * n..(bi + 1) * cout * n];
            gemm(cout, kk, n, weight.data(), false, &cols, false, dst, false);
            for (o, row) in dst.chunks_mut(n).enumerate() {
                let bv = bias.data()[o];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }

        let (xd, od, md, wd) = (x.shared(), offsets.shared(), masks.shared(), weight.shared());
        let inputs = [x, offsets, masks, weight, bias];
        self.record(vec![b, cout, h, w], out, &inputs, move |gy, needs| {
            let mut dx = needs[0].then(|| vec![0.0f32; b * in_len]);
            let mut doff = needs[1].then(|| vec![0.0f32; b * 2 * n]);
            let mut dm = needs[2].then(|| vec![0.0f32; b * n]);
            let mut dw = needs[3].then(|| vec![0.0f32; cout * kk]);
            let mut db = needs[4].then(|| vec![0.0f32; cout]);
            let mut cols = vec![0.0f32; kk * n];
            let mut dcols = vec![0.0f32; kk * n];
            let sample_side = needs[0] || needs[1] || needs[2];
            for bi in 0..b {
                let gy_b = &gy[bi * cout * n..(bi + 1) * cout * n];
                let xb = &xd[bi * in_len..(bi + 1) * in_len];
                let ob = &od[bi * 2 * n..(bi + 1) * 2 * n];
                let mb = &md[bi * n..(bi + 1) * n];
                if let Some(dw) = dw.as_mut() {
                    deform_cols(xb, ob, mb, g, &mut cols);
                    gemm(cout, n, kk, gy_b, false, &cols, true, dw, true);
                }
                if let Some(db) = db.as_mut() {
                    for (o, row) in gy_b.chunks(n).enumerate() {
                        db[o] += row.iter().sum::<f32>();
                    }
                }
                if !sample_side {
                    continue;
                }
                gemm(kk, cout, n, &wd, true, gy_b, false, &mut dcols, false);
                for p in 0..n {
                    let m = mb[p];
                    let (mut gm, mut goy, mut gox) = (0.0f32, 0.0f32, 0.0f32);
                    for k in 0..TAPS {
                        let t = g.taps(ob, p, k);
                        for c in 0..cin {
                            let gc = dcols[(c * TAPS + k) * n + p];
                            let plane = &xb[c * n..(c + 1) * n];
                            if let Some(dx) = dx.as_mut() {
                                t.scatter(&mut dx[bi * in_len + c * n..bi * in_len + (c + 1) * n], gc * m);
                            }
                            if dm.is_some() {
                                gm += gc * t.sample(plane);
                            }
                            if doff.is_some() {
                                let (sy, sx) = t.slope(plane);
                                goy += gc * m * sy;
                                gox += gc * m * sx;
                            }
                        }
                    }
                    if let Some(dm) = dm.as_mut() {
                        dm[bi * n + p] = gm;
                    }
                    if let Some(doff) = doff.as_mut() {
                        doff[bi * 2 * n + p] = gox;
                        doff[bi * 2 * n + n + p] = goy;
                    }
                }
            }
            vec![dx, doff, dm, dw, db]
        })
    }
}
