/// Bilinear footprint of one fractional sample point; taps outside the plane
/// are flagged and read as zero.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Bilerp {
    idx: [usize; 4],
    w: [f32; 4],
    inside: [bool; 4],
    ax: f32,
    ay: f32,
}

impl Bilerp {
    /// Taps ordered (y0,x0), (y0,x0+1), (y0+1,x0), (y0+1,x0+1).
    pub fn new(sy: f32, sx: f32, h: usize, w: usize) -> Self {
        let (fy, fx) = (sy.floor(), sx.floor());
        let (ay, ax) = (sy - fy, sx - fx);
        let (y0, x0) = (fy as i64, fx as i64);
        let mut idx = [0usize; 4];
        let mut inside = [false; 4];
        for (t, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let (y, x) = (y0 + dy, x0 + dx);
            if y >= 0 && y < h as i64 && x >= 0 && x < w as i64 {
                inside[t] = true;
                idx[t] = y as usize * w + x as usize;
            }
        }
        let w = [(1.0 - ay) * (1.0 - ax), (1.0 - ay) * ax, ay * (1.0 - ax), ay * ax];
        Self {
            idx,
            w,
            inside,
            ax,
            ay,
        }
    }

    /// Interpolated value. Zero-weight taps are skipped so integral sample
    /// points reproduce the source bit for bit.
    #[inline]
    pub fn sample(&self, plane: &[f32]) -> f32 {
        let mut acc = 0.0f32;
        let mut first = true;
        for t in 0..4 {
            if self.inside[t] && self.w[t] != 0.0 {
                let v = self.w[t] * plane[self.idx[t]];
                if first {
                    acc = v;
                    first = false;
                } else {
                    acc += v;
                }
            }
        }
        acc
    }

    /// Partial derivatives of [`Bilerp::sample`] with respect to (sy, sx).
    #[inline]
    pub fn slope(&self, plane: &[f32]) -> (f32, f32) {
        let dwx = [-(1.0 - self.ay), 1.0 - self.ay, -self.ay, self.ay];
        let dwy = [-(1.0 - self.ax), -self.ax, 1.0 - self.ax, self.ax];
        let (mut gy, mut gx) = (0.0f32, 0.0f32);
        for t in 0..4 {
            if self.inside[t] {
                let v = plane[self.idx[t]];
                gy += dwy[t] * v;
                gx += dwx[t] * v;
            }
        }
        (gy, gx)
    }

    /// Adjoint of [`Bilerp::sample`]: add `g` times each tap weight.
    #[inline]
    pub fn scatter(&self, plane: &mut [f32], g: f32) {
        for t in 0..4 {
            if self.inside[t] {
                plane[self.idx[t]] += self.w[t] * g;
            }
        }
    }
}
