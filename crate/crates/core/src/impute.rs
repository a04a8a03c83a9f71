//! Single imputation: every missing view is replaced by the zero vector
//! before a model sees the collection.

use crate::types::{Collection, Dataset};

/// Value written into every feature of a missing view.
pub const IMPUTATION_VALUE: f64 = 0.0;

/// Returns a copy of `collection` whose missing views carry all-zero
/// features. Present views and availability flags are untouched.
pub fn impute(collection: &Collection) -> Collection {
    let mut out = collection.clone();
    impute_in_place(&mut out);
    out
}

pub fn impute_in_place(collection: &mut Collection) {
    for view in collection.views.iter_mut().filter(|v| !v.present) {
        view.features.iter_mut().for_each(|x| *x = IMPUTATION_VALUE);
    }
}

pub fn impute_dataset(ds: &mut Dataset) {
    ds.collections.iter_mut().for_each(impute_in_place);
}
