use alloc::format;

use super::layers::{Activation, Conv2d, GroupNorm, GroupNormCache};
use super::layout::Layout;
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Pre-activation residual block:
/// `y = conv2(act(gn2(conv1(act(gn1(x)))))) + skip(x)`.
///
/// `skip` is a strided 1x1 convolution whenever the block changes channel
/// count or resolution, identity otherwise.
#[derive(Debug, Clone)]
pub struct ResBlock {
    gn1: GroupNorm,
    conv1: Conv2d,
    gn2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    act: Activation,
}

#[derive(Debug, Clone)]
pub struct ResBlockCache<T> {
    x: Tensor<T>,
    gn1: GroupNormCache<T>,
    n1: Tensor<T>,
    a1: Tensor<T>,
    gn2: GroupNormCache<T>,
    n2: Tensor<T>,
    a2: Tensor<T>,
}

impl ResBlock {
    pub fn new(
        layout: &mut Layout,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        groups: usize,
        act: Activation,
    ) -> Self {
        let gn1 = GroupNorm::new(layout, &format!("{name}.norm1"), cin, groups);
        let conv1 = Conv2d::new(layout, &format!("{name}.conv1"), cin, cout, 3, stride);
        let gn2 = GroupNorm::new(layout, &format!("{name}.norm2"), cout, groups);
        let conv2 = Conv2d::new(layout, &format!("{name}.conv2"), cout, cout, 3, 1);
        let skip = (cin != cout || stride != 1)
            .then(|| Conv2d::new(layout, &format!("{name}.skip"), cin, cout, 1, stride));
        Self { gn1, conv1, gn2, conv2, skip, act }
    }

    pub fn out_shape(&self, s: Shape) -> Shape {
        self.conv1.out_shape(s)
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>) -> (Tensor<T>, ResBlockCache<T>) {
        let (n1, gn1) = self.gn1.forward(p, x);
        let a1 = self.act.forward(&n1);
        let h = self.conv1.forward(p, &a1);
        let (n2, gn2) = self.gn2.forward(p, &h);
        let a2 = self.act.forward(&n2);
        let mut y = self.conv2.forward(p, &a2);
        match &self.skip {
            Some(skip) => y.add_assign(&skip.forward(p, x)),
            None => y.add_assign(x),
        }
        (y, ResBlockCache { x: x.clone(), gn1, n1, a1, gn2, n2, a2 })
    }

    pub fn backward<T: Real>(&self, p: &[T], cache: &ResBlockCache<T>, gy: &Tensor<T>, g: &mut [T]) -> Tensor<T> {
        let da2 = self.conv2.backward(p, &cache.a2, gy, g, true).unwrap();
        let dn2 = self.act.backward(&cache.n2, &da2);
        let dh = self.gn2.backward(p, &cache.gn2, &dn2, g);
        let da1 = self.conv1.backward(p, &cache.a1, &dh, g, true).unwrap();
        let dn1 = self.act.backward(&cache.n1, &da1);
        let mut dx = self.gn1.backward(p, &cache.gn1, &dn1, g);
        match &self.skip {
            Some(skip) => dx.add_assign(&skip.backward(p, &cache.x, gy, g, true).unwrap()),
            None => dx.add_assign(gy),
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(cin, cout, stride) in &[(4, 4, 1), (2, 4, 2)] {
            let mut layout = Layout::new();
            let block = ResBlock::new(&mut layout, "b", cin, cout, stride, 2, Activation::Silu);
            let p: Vec<f64> = layout.init(&mut rng);
            let x = Tensor {
                shape: Shape::new(cin, 6, 4),
                data: (0..cin * 24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let out = block.out_shape(x.shape);
            let r: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |p: &[f64], x: &Tensor<f64>| {
                block.forward(p, x).0.data.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache) = block.forward(&p, &x);
            let mut g = vec![0.0; layout.total()];
            let dx = block.backward(&p, &cache, &Tensor { shape: out, data: r.clone() }, &mut g);
            for i in (0..p.len()).step_by(3) {
                let mut pp = p.clone();
                pp[i] += 1e-6;
                let up = loss(&pp, &x);
                pp[i] -= 2e-6;
                let fd = (up - loss(&pp, &x)) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}");
            }
            for i in 0..x.data.len() {
                let mut xx = x.clone();
                xx.data[i] += 1e-6;
                let up = loss(&p, &xx);
                xx.data[i] -= 2e-6;
                let fd = (up - loss(&p, &xx)) / 2e-6;
                assert!((fd - dx.data[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
