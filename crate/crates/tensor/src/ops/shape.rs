use crate::error::{config, Result};
use crate::{Tape, Tensor};

/// Sentinel in an index map: the output element is a constant zero.
const ZERO: u32 = u32::MAX;

/// Top-left corner of a square window, one per batch item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub y0: usize,
    pub x0: usize,
}

impl Tape {
    /// Output element `i` reads input element `map[i]`, or zero for [`ZERO`].
    /// The backward pass scatter-adds, so repeated sources are allowed.
    fn gather(&self, x: &Tensor, shape: Vec<usize>, map: Vec<u32>) -> Result<Tensor> {
        debug_assert_eq!(shape.iter().product::<usize>(), map.len());
        let src = x.data();
        let data = map
            .iter()
            .map(|&i| if i == ZERO { 0.0 } else { src[i as usize] })
            .collect();
        let n_in = x.numel();
        self.record(shape, data, &[x], move |g, _| {
            let mut gx = vec![0.0f32; n_in];
            for (&i, &gv) in map.iter().zip(g) {
                if i != ZERO {
                    gx[i as usize] += gv;
                }
            }
            vec![Some(gx)]
        })
    }

    fn check_index_range(x: &Tensor) -> Result<()> {
        if x.numel() >= ZERO as usize {
            return config("tensor too large for index maps");
        }
        Ok(())
    }

    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != x.numel() {
            return config(format!("cannot reshape {:?} into {shape:?}", x.shape()));
        }
        self.record(shape.to_vec(), x.to_vec(), &[x], |g, _| vec![Some(g.to_vec())])
    }

    /// Stack rank-4 tensors along the channel axis, in argument order.
    pub fn concat_channels(&self, xs: &[&Tensor]) -> Result<Tensor> {
        let Some(first) = xs.first() else {
            return config("concat of an empty list");
        };
        let [b, _, h, w] = first.nchw()?;
        let mut chans = Vec::with_capacity(xs.len());
        for x in xs {
            let [xb, xc, xh, xw] = x.nchw()?;
            if (xb, xh, xw) != (b, h, w) {
                return config(format!(
                    "concat: shape {:?} does not match batch/spatial dims of {:?}",
                    x.shape(),
                    first.shape()
                ));
            }
            chans.push(xc);
        }
        let total: usize = chans.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for (x, &c) in xs.iter().zip(&chans) {
                data.extend_from_slice(&x.data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        self.record(vec![b, total, h, w], data, xs, move |g, needs| {
            let mut off = 0;
            chans
                .iter()
                .zip(needs)
                .map(|(&c, &need)| {
                    let start = off;
                    off += c;
                    need.then(|| {
                        let mut gx = Vec::with_capacity(b * c * plane);
                        for bi in 0..b {
                            let row = (bi * total + start) * plane;
                            gx.extend_from_slice(&g[row..row + c * plane]);
                        }
                        gx
                    })
                })
                .collect()
        })
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if start + len > c {
            return config(format!(
                "slice_channels: [{start}, {}) out of {c} channels",
                start + len
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let row = (bi * c + start) * plane;
            data.extend_from_slice(&x.data()[row..row + len * plane]);
        }
        self.record(vec![b, len, h, w], data, &[x], move |g, _| {
            let mut gx = vec![0.0f32; b * c * plane];
            for bi in 0..b {
                let row = (bi * c + start) * plane;
                gx[row..row + len * plane]
                    .copy_from_slice(&g[bi * len * plane..(bi + 1) * len * plane]);
            }
            vec![Some(gx)]
        })
    }

    /// (B, C·r², H, W) → (B, C, rH, rW). Input channel `c·r² + r·dy + dx`
    /// lands at output position `(r·y + dy, r·x + dx)`.
    pub fn pixel_shuffle_up(&self, x: &Tensor, r: usize) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if r == 0 || c % (r * r) != 0 {
            return config(format!(
                "pixel_shuffle_up: {c} channels not divisible by {r}^2"
            ));
        }
        Self::check_index_range(x)?;
        let co = c / (r * r);
        let (ho, wo) = (h * r, w * r);
        let mut map = Vec::with_capacity(x.numel());
        for bi in 0..b {
            for oc in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let ic = oc * r * r + r * (oy % r) + ox % r;
                        map.push((((bi * c + ic) * h + oy / r) * w + ox / r) as u32);
                    }
                }
            }
        }
        self.gather(x, vec![b, co, ho, wo], map)
    }

    /// Exact inverse of [`Tape::pixel_shuffle_up`].
    pub fn pixel_unshuffle_down(&self, x: &Tensor, r: usize) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return config(format!(
                "pixel_unshuffle_down: {h}x{w} not divisible by {r}"
            ));
        }
        Self::check_index_range(x)?;
        let co = c * r * r;
        let (ho, wo) = (h / r, w / r);
        let mut map = Vec::with_capacity(x.numel());
        for bi in 0..b {
            for oc in 0..co {
                let (ic, dy, dx) = (oc / (r * r), (oc % (r * r)) / r, oc % r);
                for oy in 0..ho {
                    for ox in 0..wo {
                        map.push((((bi * c + ic) * h + oy * r + dy) * w + ox * r + dx) as u32);
                    }
                }
            }
        }
        self.gather(x, vec![b, co, ho, wo], map)
    }

    /// Cut a `size × size` window per batch item.
    pub fn crop_windows(&self, x: &Tensor, windows: &[Window], size: usize) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if windows.len() != b {
            return config(format!("crop: {} windows for batch {b}", windows.len()));
        }
        for win in windows {
            if win.y0 + size > h || win.x0 + size > w {
                return config(format!(
                    "crop: {size}x{size} window at ({}, {}) exceeds {h}x{w}",
                    win.y0, win.x0
                ));
            }
        }
        Self::check_index_range(x)?;
        let mut map = Vec::with_capacity(b * c * size * size);
        for (bi, win) in windows.iter().enumerate() {
            for ci in 0..c {
                for y in 0..size {
                    let row = ((bi * c + ci) * h + win.y0 + y) * w + win.x0;
                    map.extend((row..row + size).map(|i| i as u32));
                }
            }
        }
        self.gather(x, vec![b, c, size, size], map)
    }

    /// Place each square patch into a zero `height × width` plane at its window.
    pub fn paste_windows(
        &self,
        x: &Tensor,
        windows: &[Window],
        height: usize,
        width: usize,
    ) -> Result<Tensor> {
        let [b, c, s, s2] = x.nchw()?;
        if s != s2 {
            return config(format!("paste: patch must be square, got {s}x{s2}"));
        }
        if windows.len() != b {
            return config(format!("paste: {} windows for batch {b}", windows.len()));
        }
        for win in windows {
            if win.y0 + s > height || win.x0 + s > width {
                return config(format!(
                    "paste: {s}x{s} patch at ({}, {}) exceeds {height}x{width}",
                    win.y0, win.x0
                ));
            }
        }
        Self::check_index_range(x)?;
        let mut map = vec![ZERO; b * c * height * width];
        for (bi, win) in windows.iter().enumerate() {
            for ci in 0..c {
                for y in 0..s {
                    let dst = ((bi * c + ci) * height + win.y0 + y) * width + win.x0;
                    let src = ((bi * c + ci) * s + y) * s;
                    for x in 0..s {
                        map[dst + x] = (src + x) as u32;
                    }
                }
            }
        }
        self.gather(x, vec![b, c, height, width], map)
    }

    /// Rectangular crop shared by the whole batch.
    pub fn crop(&self, x: &Tensor, y0: usize, x0: usize, height: usize, width: usize) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if y0 + height > h || x0 + width > w {
            return config(format!(
                "crop: {height}x{width} at ({y0}, {x0}) exceeds {h}x{w}"
            ));
        }
        Self::check_index_range(x)?;
        let mut map = Vec::with_capacity(b * c * height * width);
        for plane in 0..b * c {
            for y in 0..height {
                let row = (plane * h + y0 + y) * w + x0;
                map.extend((row..row + width).map(|i| i as u32));
            }
        }
        self.gather(x, vec![b, c, height, width], map)
    }

    /// Zero plane of `height × width` with `x` placed at `(y0, x0)`.
    pub fn pad_into(&self, x: &Tensor, y0: usize, x0: usize, height: usize, width: usize) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if y0 + h > height || x0 + w > width {
            return config(format!(
                "pad: {h}x{w} at ({y0}, {x0}) exceeds {height}x{width}"
            ));
        }
        Self::check_index_range(x)?;
        let mut map = vec![ZERO; b * c * height * width];
        for plane in 0..b * c {
            for y in 0..h {
                let dst = (plane * height + y0 + y) * width + x0;
                for xx in 0..w {
                    map[dst + xx] = ((plane * h + y) * w + xx) as u32;
                }
            }
        }
        self.gather(x, vec![b, c, height, width], map)
    }

    /// Extend the bottom and right edges by mirror reflection (edge not repeated).
    pub fn pad_reflect(&self, x: &Tensor, bottom: usize, right: usize) -> Result<Tensor> {
        let [b, c, h, w] = x.nchw()?;
        if (bottom > 0 && bottom >= h) || (right > 0 && right >= w) {
            return config(format!(
                "reflect pad of ({bottom}, {right}) needs more than {h}x{w} pixels"
            ));
        }
        Self::check_index_range(x)?;
        let (ho, wo) = (h + bottom, w + right);
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
        let mut map = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            for y in 0..ho {
                let sy = reflect(y, h);
                for xx in 0..wo {
                    map.push(((plane * h + sy) * w + reflect(xx, w)) as u32);
                }
            }
        }
        self.gather(x, vec![b, c, ho, wo], map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn shuffle_shapes() {
        let tape = Tape::inference();
        let up = tape.pixel_shuffle_up(&ramp(&[1, 4, 2, 2]), 2).unwrap();
        assert_eq!(up.shape(), &[1, 1, 4, 4]);
        let down = tape.pixel_unshuffle_down(&ramp(&[1, 1, 4, 4]), 2).unwrap();
        assert_eq!(down.shape(), &[1, 4, 2, 2]);
    }

    #[test]
    fn shuffle_index_mapping() {
        // channel 3 = (dy=1, dx=1); its (0, 0) element must land at (1, 1)
        let tape = Tape::inference();
        let mut v = vec![0.0; 16];
        v[3 * 4] = 7.0;
        let x = Tensor::from_vec(&[1, 4, 2, 2], v).unwrap();
        let up = tape.pixel_shuffle_up(&x, 2).unwrap();
        let hot: Vec<usize> = (0..16).filter(|&i| up.data()[i] != 0.0).collect();
        assert_eq!(hot, vec![4 + 1]);
        assert_eq!(up.data()[5], 7.0);
    }

    #[test]
    fn shuffle_rejects_indivisible() {
        let tape = Tape::inference();
        assert!(tape.pixel_shuffle_up(&ramp(&[1, 3, 2, 2]), 2).is_err());
        assert!(tape.pixel_unshuffle_down(&ramp(&[1, 1, 3, 4]), 2).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let tape = Tape::inference();
        let a = ramp(&[2, 4, 3, 3]);
        let b = tape.scale(&ramp(&[2, 4, 3, 3]), -1.0).unwrap();
        let cat = tape.concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 8, 3, 3]);
        assert!(tape.slice_channels(&cat, 0, 4).unwrap().bit_eq(&a));
        assert!(tape.slice_channels(&cat, 4, 4).unwrap().bit_eq(&b));
        let single = tape.concat_channels(&[&a]).unwrap();
        assert!(single.bit_eq(&a));
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let tape = Tape::inference();
        let err = tape
            .concat_channels(&[&ramp(&[1, 1, 2, 2]), &ramp(&[1, 1, 2, 3])])
            .unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn crop_and_paste_are_adjoint_placements() {
        let tape = Tape::inference();
        let x = ramp(&[2, 1, 5, 5]);
        let wins = [Window { y0: 1, x0: 2 }, Window { y0: 0, x0: 0 }];
        let patch = tape.crop_windows(&x, &wins, 3).unwrap();
        assert_eq!(patch.data()[0], 7.0);
        assert_eq!(patch.data()[9], 25.0);
        let plane = tape.paste_windows(&patch, &wins, 5, 5).unwrap();
        assert_eq!(plane.data()[7], 7.0);
        assert_eq!(plane.data()[0], 0.0);
        assert!(tape.crop_windows(&x, &wins[..1], 3).is_err());
    }

    #[test]
    fn reflect_pad_mirrors_without_repeating_the_edge() {
        let tape = Tape::inference();
        let x = ramp(&[1, 1, 3, 1]);
        let p = tape.pad_reflect(&x, 2, 0).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 1.0, 0.0]);
    }
}
