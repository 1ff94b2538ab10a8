use ultrabm_tensor::{Real, Var};

use super::{Builder, ContextUnit, Conv, Ctx, LEAK};
use crate::error::{shape, Result};

/// Five-level encoder/decoder built from context units, max-pool down and
/// bilinear up. The decoder exposes every level to a caller hook.
#[derive(Clone, Debug)]
pub struct UNet {
    widths: Vec<usize>,
    stem: Conv,
    down: Vec<Conv>,
    enc: Vec<ContextUnit>,
    up: Vec<Conv>,
    fuse: Vec<Conv>,
    dec: Vec<ContextUnit>,
}

impl UNet {
    pub fn build<T: Real>(b: &mut Builder<T>, name: &str, cin: usize, widths: &[usize]) -> Self {
        let n = widths.len();
        let stem = b.conv(&format!("{name}.stem"), cin, widths[0], 3);
        let mut down = Vec::new();
        let mut enc = Vec::new();
        for k in 0..n {
            if k > 0 {
                down.push(b.conv(&format!("{name}.down{}", k + 1), widths[k - 1], widths[k], 3));
            }
            enc.push(b.context_unit(&format!("{name}.enc{}", k + 1), widths[k]));
        }
        let mut up = Vec::new();
        let mut fuse = Vec::new();
        let mut dec = Vec::new();
        for k in (0..n).rev() {
            if k + 1 < n {
                up.push(b.conv(&format!("{name}.up{}", k + 1), widths[k + 1], widths[k], 1));
                fuse.push(b.conv(&format!("{name}.fuse{}", k + 1), 2 * widths[k], widths[k], 1));
            }
            dec.push(b.context_unit(&format!("{name}.dec{}", k + 1), widths[k]));
        }
        Self { widths: widths.to_vec(), stem, down, enc, up, fuse, dec }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    /// Runs the network. `hook(cx, level, feature)` sees each decoder level,
    /// coarsest first with `level` counted from 1 at full resolution, and its
    /// return value is what the next finer level consumes. Returns the hooked
    /// decoder features ordered finest first.
    pub fn forward<T, H>(&self, cx: &mut Ctx<T>, x: Var, mut hook: H) -> Result<Vec<Var>>
    where
        T: Real,
        H: FnMut(&mut Ctx<T>, usize, Var) -> Result<Var>,
    {
        let n = self.levels();
        let s = cx.g.shape(x).to_vec();
        let f = 1 << (n - 1);
        if s.len() != 4 || !s[2].is_multiple_of(f) || !s[3].is_multiple_of(f) {
            return shape(format!("U-Net input {s:?} needs spatial size divisible by {f}"));
        }
        let mut skips = Vec::with_capacity(n);
        let mut h = self.stem.forward(cx, x)?;
        h = cx.g.leaky_relu(h, LEAK);
        for k in 0..n {
            if k > 0 {
                h = cx.g.max_pool2(h)?;
                h = self.down[k - 1].forward(cx, h)?;
                h = cx.g.leaky_relu(h, LEAK);
            }
            h = self.enc[k].forward(cx, h)?;
            skips.push(h);
        }
        let mut out = vec![h; n];
        let mut d = self.dec[0].forward(cx, skips[n - 1])?;
        d = hook(cx, n, d)?;
        out[n - 1] = d;
        for (i, k) in (0..n - 1).rev().enumerate() {
            let u = cx.g.upsample_bilinear(d, 2)?;
            let u = self.up[i].forward(cx, u)?;
            let cat = cx.g.concat(&[u, skips[k]], 1)?;
            let m = self.fuse[i].forward(cx, cat)?;
            let m = cx.g.leaky_relu(m, LEAK);
            d = self.dec[i + 1].forward(cx, m)?;
            d = hook(cx, k + 1, d)?;
            out[k] = d;
        }
        Ok(out)
    }
}
