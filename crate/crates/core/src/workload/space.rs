use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Dims, Layer, LayerKind, ModelError, NeuronParams, SnnModel};

/// A candidate operation for one block, instantiated against the block's input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTemplate {
    Conv {
        out_channels: u32,
        kernel: u32,
        padding: u32,
    },
    Fc {
        outputs: u32,
    },
    MaxPool {
        kernel: u32,
    },
}

/// `blocks[i]` lists the M candidate operations of block i. Expansion is the
/// cartesian product in lexicographic order, skipping shape-invalid
/// combinations, stopped at `cap` models.
#[derive(Clone, Debug)]
pub struct SnnSearchSpace {
    pub input: Dims,
    pub timesteps: u32,
    pub blocks: Vec<Vec<OpTemplate>>,
    pub neuron: NeuronParams,
    pub weight_seed: u64,
    pub weight_range: (i8, i8),
    pub cap: usize,
}

impl SnnSearchSpace {
    /// Number of combinations before filtering.
    pub fn raw_size(&self) -> u128 {
        self.blocks.iter().map(|b| b.len() as u128).product()
    }

    pub fn expand(&self) -> Vec<SnnModel> {
        let mut out = Vec::new();
        if self.blocks.iter().any(Vec::is_empty) {
            return out;
        }
        let mut choice = vec![0usize; self.blocks.len()];
        'outer: loop {
            if out.len() >= self.cap {
                break;
            }
            if let Ok(m) = self.instantiate(&choice) {
                out.push(m);
            }
            for i in (0..choice.len()).rev() {
                choice[i] += 1;
                if choice[i] < self.blocks[i].len() {
                    continue 'outer;
                }
                choice[i] = 0;
            }
            break;
        }
        out
    }

    /// Builds the model picking `choice[i]` in block i. Weights are drawn from a
    /// stream seeded by the space seed and the choice vector.
    pub fn instantiate(&self, choice: &[usize]) -> Result<SnnModel, ModelError> {
        let mut seed = self.weight_seed;
        for &c in choice {
            seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(c as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.weight_range;
        let mut draw = |n: u32| -> Vec<i8> { (0..n).map(|_| rng.gen_range(lo..=hi)).collect() };
        let mut prev = self.input;
        let mut layers = Vec::new();
        for (i, (&c, block)) in choice.iter().zip(&self.blocks).enumerate() {
            let li = i + 1;
            let (kind, neuron) = match block[c] {
                OpTemplate::Conv {
                    out_channels,
                    kernel,
                    padding,
                } => (
                    LayerKind::Conv {
                        in_channels: prev.c,
                        out_channels,
                        kernel,
                        stride: 1,
                        padding,
                        weights: draw(out_channels * prev.c * kernel * kernel),
                    },
                    Some(self.neuron),
                ),
                OpTemplate::Fc { outputs } => (
                    LayerKind::Fc {
                        inputs: prev.size(),
                        outputs,
                        weights: draw(outputs * prev.size()),
                    },
                    Some(self.neuron),
                ),
                OpTemplate::MaxPool { kernel } => (LayerKind::MaxPool { kernel, stride: kernel }, None),
            };
            let layer = Layer::new(li, prev, kind, neuron)?;
            prev = layer.output;
            layers.push(layer);
        }
        SnnModel::new(self.timesteps, self.input, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(blocks: Vec<Vec<OpTemplate>>, cap: usize) -> SnnSearchSpace {
        SnnSearchSpace {
            input: Dims::new(1, 4, 4),
            timesteps: 2,
            blocks,
            neuron: NeuronParams {
                leak_q8: 240,
                threshold: 8,
                reset: 0,
            },
            weight_seed: 1,
            weight_range: (-4, 8),
            cap,
        }
    }

    #[test]
    fn expansion_is_m_to_the_n() {
        let ops = vec![
            OpTemplate::Conv {
                out_channels: 1,
                kernel: 1,
                padding: 0,
            },
            OpTemplate::Conv {
                out_channels: 2,
                kernel: 3,
                padding: 1,
            },
        ];
        let s = space(vec![ops.clone(), ops.clone(), ops], 100);
        assert_eq!(s.raw_size(), 8);
        assert_eq!(s.expand().len(), 8);
        assert_eq!(space(s.blocks.clone(), 3).expand().len(), 3);
    }

    #[test]
    fn invalid_shapes_filtered() {
        let s = space(
            vec![
                vec![OpTemplate::MaxPool { kernel: 2 }],
                vec![OpTemplate::MaxPool { kernel: 2 }, OpTemplate::MaxPool { kernel: 4 }],
            ],
            10,
        );
        // 4x4 -> 2x2 leaves no room for a 4x4 window
        assert_eq!(s.expand().len(), 1);
    }

    #[test]
    fn instantiation_is_deterministic() {
        let s = space(vec![vec![OpTemplate::Fc { outputs: 3 }]], 10);
        assert_eq!(s.instantiate(&[0]).unwrap(), s.instantiate(&[0]).unwrap());
    }
}
