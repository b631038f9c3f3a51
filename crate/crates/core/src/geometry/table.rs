//! Plain-text frame tables.
//!
//! One line per residue: the residue index followed by the nine rotation
//! entries in row-major order and the three translation components, separated
//! by single spaces. Floats are printed with 17 significant digits so parsing
//! reproduces the original f64 bits. Files holding several chains separate the
//! per-chain tables with one blank line.

use nalgebra::{Matrix3, Vector3};

use super::{is_rotation, Frame, FrameChain, ROTATION_TOL};
use crate::error::{invalid, Result};

pub(super) fn chain_to_table(chain: &FrameChain) -> String {
    let mut out = String::new();
    for (i, f) in chain.frames.iter().enumerate() {
        out.push_str(&i.to_string());
        for row in 0..3 {
            for col in 0..3 {
                out.push(' ');
                out.push_str(&format!("{:.16e}", f.rot[(row, col)]));
            }
        }
        for k in 0..3 {
            out.push(' ');
            out.push_str(&format!("{:.16e}", f.trans[k]));
        }
        out.push('\n');
    }
    out
}

pub(super) fn chain_from_table(text: &str) -> Result<FrameChain> {
    let chains = chains_from_table(text)?;
    match chains.len() {
        1 => Ok(chains.into_iter().next().unwrap()),
        n => Err(invalid(format!("expected one frame table, found {n}"))),
    }
}

/// Concatenates per-chain tables, separated by blank lines.
pub fn chains_to_table(chains: &[FrameChain]) -> String {
    chains
        .iter()
        .map(|c| chain_to_table(c))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses one or more blank-line separated frame tables. Every rotation is
/// validated at [`ROTATION_TOL`] and indices must count up from zero within
/// each chain.
pub fn chains_from_table(text: &str) -> Result<Vec<FrameChain>> {
    let mut chains = Vec::new();
    let mut current: Vec<Frame> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                chains.push(FrameChain::new(std::mem::take(&mut current)));
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 13 {
            return Err(invalid(format!(
                "frame table line {}: expected 13 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| invalid(format!("frame table line {}: bad index", lineno + 1)))?;
        if idx != current.len() {
            return Err(invalid(format!(
                "frame table line {}: index {} out of order (expected {})",
                lineno + 1,
                idx,
                current.len()
            )));
        }
        let mut vals = [0.0_f64; 12];
        for (k, field) in fields[1..].iter().enumerate() {
            vals[k] = field.parse().map_err(|_| {
                invalid(format!(
                    "frame table line {}: unparseable float {:?}",
                    lineno + 1,
                    field
                ))
            })?;
        }
        let rot = Matrix3::new(
            vals[0], vals[1], vals[2], //
            vals[3], vals[4], vals[5], //
            vals[6], vals[7], vals[8],
        );
        if !is_rotation(&rot, ROTATION_TOL) {
            return Err(invalid(format!(
                "frame table line {}: rotation block fails orthonormality at {ROTATION_TOL:e}",
                lineno + 1
            )));
        }
        current.push(Frame::new(rot, Vector3::new(vals[9], vals[10], vals[11])));
    }
    if !current.is_empty() {
        chains.push(FrameChain::new(current));
    }
    if chains.is_empty() {
        return Err(invalid("frame table: no residue lines found"));
    }
    Ok(chains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::uniform_so3_sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> FrameChain {
        FrameChain::new(
            (0..n)
                .map(|_| {
                    Frame::new(
                        uniform_so3_sample(rng),
                        Vector3::new(
                            rng.gen_range(-10.0..10.0),
                            rng.gen_range(-10.0..10.0),
                            rng.gen_range(-10.0..10.0),
                        ),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [1, 2, 8] {
            let chain = random_chain(&mut rng, n);
            let parsed = FrameChain::from_table(&chain.to_table()).unwrap();
            assert_eq!(chain, parsed);
        }
    }

    #[test]
    fn multi_chain_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let chains: Vec<FrameChain> = (0..3).map(|_| random_chain(&mut rng, 4)).collect();
        let text = chains_to_table(&chains);
        let parsed = chains_from_table(&text).unwrap();
        assert_eq!(chains, parsed);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(FrameChain::from_table("").is_err());
        assert!(FrameChain::from_table("0 1 0 0\n").is_err());
        // Wrong leading index.
        let chain = FrameChain::identity(1);
        let line = chain.to_table().replace("0 ", "3 ");
        assert!(FrameChain::from_table(&line).is_err());
        // Scaled rotation violates orthonormality.
        let bad = chain.to_table().replace(
            "1.0000000000000000e0",
            "1.1000000000000000e0",
        );
        assert!(FrameChain::from_table(&bad).is_err());
    }
}
