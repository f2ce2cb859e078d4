use fvsr_tensor::{Bound, ParamStore, Tape, Tensor};
use rand::Rng;

use crate::error::Result;

/// 3×3, stride 1, padding 1 convolution using `{name}.weight` / `{name}.bias`.
pub(crate) fn conv(t: &Tape, p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(t.conv2d(x, w, Some(b), 1, 1)?)
}

pub(crate) fn conv_leaky(t: &Tape, p: &Bound, name: &str, x: &Tensor, slope: f32) -> Result<Tensor> {
    let y = conv(t, p, name, x)?;
    Ok(t.leaky_relu(&y, slope)?)
}

pub(crate) fn init3<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    cout: usize,
    cin: usize,
    rng: &mut R,
) -> Result<()> {
    Ok(store.init_conv(name, cout, cin, 3, rng)?)
}

/// Scalars in a 3×3 conv layer with bias.
pub(crate) fn conv_size(cout: usize, cin: usize) -> usize {
    cout * cin * 9 + cout
}
