use rand::Rng;

use crate::nn::{Conv, ParamStore, Tape, Var};

/// Feature extractor with output stride 8.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Backbone {
    stem: Conv,
    stages: Vec<Conv>,
    /// Residual pairs following each stage (empty for the plain preset).
    blocks: Vec<(Conv, Conv)>,
}

pub(crate) const STRIDE: usize = 8;

impl Backbone {
    pub(crate) fn new<R: Rng>(residual: bool, base: usize, store: &mut ParamStore, rng: &mut R) -> Self {
        let stem = Conv::new(store, "backbone.stem", 3, base, 3, 1, 1, 1.0, rng);
        let widths = [base, base * 2, base * 4, base * 4];
        let mut stages = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..3 {
            let (cin, cout) = (widths[i], widths[i + 1]);
            stages.push(Conv::new(store, &format!("backbone.stage{i}"), cin, cout, 4, 2, 1, 1.0, rng));
            if residual {
                let a = Conv::new(store, &format!("backbone.block{i}.a"), cout, cout, 3, 1, 1, 1.0, rng);
                // small gain keeps each block close to identity at init
                let b = Conv::new(store, &format!("backbone.block{i}.b"), cout, cout, 3, 1, 1, 0.2, rng);
                blocks.push((a, b));
            }
        }
        Self { stem, stages, blocks }
    }

    pub(crate) fn out_channels(base: usize) -> usize {
        base * 4
    }

    pub(crate) fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let z = self.stem.forward(tape, store, x);
        let mut h = tape.relu(z);
        for (i, stage) in self.stages.iter().enumerate() {
            let z = stage.forward(tape, store, h);
            h = tape.relu(z);
            if let Some((a, b)) = self.blocks.get(i) {
                let z = a.forward(tape, store, h);
                let r = tape.relu(z);
                let r = b.forward(tape, store, r);
                let sum = tape.add(h, r);
                h = tape.relu(sum);
            }
        }
        h
    }
}

/// Shared 3x3 conv followed by per-anchor class logits and box deltas.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Head {
    conv: Conv,
    cls: Conv,
    reg: Conv,
}

impl Head {
    pub(crate) fn new<R: Rng>(
        in_ch: usize,
        anchors: usize,
        classes: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let conv = Conv::new(store, "head.conv", in_ch, in_ch, 3, 1, 1, 1.0, rng);
        let cls = Conv::new(store, "head.cls", in_ch, anchors * classes, 1, 1, 0, 0.1, rng);
        let reg = Conv::new(store, "head.reg", in_ch, anchors * 4, 1, 1, 0, 0.1, rng);
        Self { conv, cls, reg }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, store: &ParamStore, feat: Var) -> (Var, Var) {
        let z = self.conv.forward(tape, store, feat);
        let h = tape.relu(z);
        (self.cls.forward(tape, store, h), self.reg.forward(tape, store, h))
    }
}
