use satl_tensor::Prng;

use super::{DatasetIndex, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};

/// Per class `c`, `floor(train_fraction * n_c)` items go to train and the rest
/// to validation. Both halves are shuffled.
pub fn stratified_split(
    ds: &DatasetIndex,
    train_fraction: f64,
    prng: &Prng,
) -> Result<(DatasetIndex, DatasetIndex)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Contract("stratified split needs a fully labeled dataset".into()))?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [NEGATIVE, POSITIVE] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::Contract(format!("class {class} has no items to split")));
        }
        prng.derive_named("class").derive(class as u64).shuffle(&mut members);
        // The epsilon keeps products such as 0.7 * 10 = 6.999... from flooring low.
        let k = (train_fraction * members.len() as f64 + 1e-9).floor() as usize;
        train.extend_from_slice(&members[..k]);
        val.extend_from_slice(&members[k..]);
    }
    prng.derive_named("train").shuffle(&mut train);
    prng.derive_named("val").shuffle(&mut val);
    let pick = |idx: &[usize]| -> DatasetIndex {
        DatasetIndex::new(ds.domain_tag.clone(), idx.iter().map(|&i| ds.items[i].clone()).collect())
    };
    Ok((pick(&train), pick(&val)))
}
