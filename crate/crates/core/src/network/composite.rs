use super::DenseNet;
use crate::dataset::CLASSES;
use crate::error::{Error, Result};

/// Stacks ten 2-hidden/1-output detectors (ordered by numeral) into one
/// 20-hidden/10-output classifier.
///
/// Hidden rows `2c` and `2c + 1` hold detector `c`'s first layer; output `c`
/// reads only those two nodes. Every other second-layer weight is exactly 0.
pub fn build_composite(subnets: &[DenseNet]) -> Result<DenseNet> {
    if subnets.len() != CLASSES {
        return Err(Error::Composition(format!(
            "need {CLASSES} sub-networks, got {}",
            subnets.len()
        )));
    }
    let inputs = subnets[0].inputs;
    for (c, s) in subnets.iter().enumerate() {
        if s.hidden != 2 || s.outputs != 1 || s.inputs != inputs {
            return Err(Error::Composition(format!(
                "sub-network {c} is {}-{}-{}, expected {inputs}-2-1",
                s.inputs, s.hidden, s.outputs
            )));
        }
    }

    let hidden = 2 * CLASSES;
    let mut net = DenseNet::zeros(inputs, hidden, CLASSES);
    for (c, s) in subnets.iter().enumerate() {
        for local in 0..2 {
            let row = 2 * c + local;
            net.w1[row * inputs..(row + 1) * inputs].copy_from_slice(&s.w1[local * inputs..(local + 1) * inputs]);
            net.b1[row] = s.b1[local];
            net.w2[c * hidden + row] = s.w2[local];
        }
        net.b2[c] = s.b2[0];
    }
    Ok(net)
}
