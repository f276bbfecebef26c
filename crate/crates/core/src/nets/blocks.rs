use super::layers::{Gelu, LayerNorm, Pointwise};
use super::{HasParams, Param, Tensor};
use crate::equivariance::{GroupConv, GroupConvKind};
use crate::error::Result;

/// ConvNeXt-style residual block on group feature maps:
/// depthwise k×k → LayerNorm → pointwise ×e → GELU → pointwise → + input.
#[derive(Debug, Clone)]
pub struct ConvNextBlock {
    dw: GroupConv,
    ln: LayerNorm,
    pw1: Pointwise,
    act: Gelu,
    pw2: Pointwise,
}

impl ConvNextBlock {
    pub fn new(name: &str, channels: usize, expansion: usize, k: usize, order: usize, seed: u64) -> Self {
        Self {
            dw: GroupConv::new(&format!("{name}.dw"), GroupConvKind::Depthwise, channels, channels, k, order, seed),
            ln: LayerNorm::new(&format!("{name}.ln"), channels),
            pw1: Pointwise::new(&format!("{name}.pw1"), channels, channels * expansion, seed),
            act: Gelu::default(),
            pw2: Pointwise::new(&format!("{name}.pw2"), channels * expansion, channels, seed),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = self.dw.forward(x)?;
        let h = self.ln.forward(&h);
        let h = self.pw1.forward(&h);
        let h = self.act.forward(&h);
        let mut y = self.pw2.forward(&h);
        y.add_assign(x);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let g = self.pw2.backward(dy);
        let g = self.act.backward(&g);
        let g = self.pw1.backward(&g);
        let g = self.ln.backward(&g);
        let mut dx = self.dw.backward(&g);
        dx.add_assign(dy);
        dx
    }
}

impl HasParams for ConvNextBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.dw.visit_params(f);
        self.ln.visit_params(f);
        self.pw1.visit_params(f);
        self.pw2.visit_params(f);
    }
}
