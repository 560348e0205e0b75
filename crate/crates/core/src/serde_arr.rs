//! Serialize `Array1<f64>` as a plain JSON array of numbers.

use ndarray::Array1;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
    a.as_slice().expect("contiguous").serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
    Vec::<f64>::deserialize(d).map(Array1::from)
}
