use super::{BlockArch, LayerCode, OpKind};

/// All legal layer decisions at 1-based `position`, in a fixed order: pool
/// order first, then predecessor codes ascending.
pub fn layer_choices(position: usize, pool: &[OpKind]) -> Vec<LayerCode> {
    let mut out = Vec::new();
    for &op in pool {
        if op.is_binary() {
            for p1 in 1..=position {
                for p2 in (1..=position).filter(|&p2| p2 != p1) {
                    out.push(LayerCode::binary(op, p1, p2));
                }
            }
        } else {
            out.extend((1..=position).map(|p| LayerCode::unary(op, p)));
        }
    }
    out
}

/// Every valid block with 1..=`max_layers` layers built from `pool`, each
/// exactly once. Blocks carry `max_len = max_layers`.
pub fn enumerate_blocks(max_layers: usize, pool: &[OpKind]) -> BlockEnumerator {
    BlockEnumerator::new(max_layers, pool)
}

/// Size of the [`enumerate_blocks`] space, saturating at `u128::MAX`.
pub fn count_blocks(max_layers: usize, pool: &[OpKind]) -> u128 {
    let mut total: u128 = 0;
    let mut prefixes: u128 = 1;
    for t in 1..=max_layers {
        prefixes = prefixes.saturating_mul(layer_choices(t, pool).len() as u128);
        total = total.saturating_add(prefixes);
    }
    total
}

/// Odometer over per-position choice lists, shortest blocks first.
pub struct BlockEnumerator {
    choices: Vec<Vec<LayerCode>>,
    max_layers: usize,
    len: usize,
    digits: Vec<usize>,
    done: bool,
}

impl BlockEnumerator {
    fn new(max_layers: usize, pool: &[OpKind]) -> Self {
        let choices: Vec<_> = (1..=max_layers).map(|t| layer_choices(t, pool)).collect();
        let done = max_layers == 0 || choices[0].is_empty();
        BlockEnumerator { choices, max_layers, len: 1, digits: vec![0], done }
    }

    fn advance(&mut self) {
        for i in (0..self.len).rev() {
            self.digits[i] += 1;
            if self.digits[i] < self.choices[i].len() {
                return;
            }
            self.digits[i] = 0;
        }
        self.len += 1;
        self.digits = vec![0; self.len];
        if self.len > self.max_layers {
            self.done = true;
        }
    }
}

impl Iterator for BlockEnumerator {
    type Item = BlockArch;

    fn next(&mut self) -> Option<BlockArch> {
        if self.done {
            return None;
        }
        let codes = self.digits.iter().enumerate().map(|(i, &d)| self.choices[i][d]);
        let arch = BlockArch::from_codes(codes, self.max_layers).expect("enumerated layer choices are legal");
        self.advance();
        Some(arch)
    }
}
