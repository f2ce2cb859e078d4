use crate::error::{config, Result};
use crate::{Tape, Tensor};

impl Tape {
    /// Non-overlapping 2×2 mean pooling.
    pub fn avg_pool2(&self, x: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return config(format!("avg_pool2: spatial size {h}x{w} is not even"));
        }
        let (ho, wo) = (h / 2, w / 2);
        let planes = b * c;
        let src = x.data();
        let mut out = vec![0.0f32; planes * ho * wo];
        for p in 0..planes {
            let s = &src[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y, xx) = (2 * oy, 2 * ox);
                    let v = s[y * w + xx] + s[y * w + xx + 1] + s[(y + 1) * w + xx] + s[(y + 1) * w + xx + 1];
                    out[(p * ho + oy) * wo + ox] = 0.25 * v;
                }
            }
        }
        self.record(vec![b, c, ho, wo], out, &[x], move |g, _| {
            let mut dx = vec![0.0f32; planes * h * w];
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        dx[(p * h + y) * w + xx] = 0.25 * g[(p * ho + y / 2) * wo + xx / 2];
                    }
                }
            }
            vec![Some(dx)]
        })
    }
}
