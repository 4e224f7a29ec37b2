//! Certification of neural-network classifiers against smooth vector-field
//! deformations of their input images.
//!
//! The crate is organised bottom-up:
//!
//! * [`imaging`]: images, bilinear interpolation, deformations, IDX and
//!   tensor-JSON I/O.
//! * [`geometry`]: exact per-pixel interval bounds over `T_p`-bounded
//!   displacements, with witnesses.
//! * [`relaxation`]: per-pixel bounding planes over the displacement
//!   components and the flow-constrained tightening LP.
//! * [`linsolve`]: dense bounded simplex and branch-and-bound MILP.
//! * [`verifier`]: networks, interval/DeepPoly propagation and exact MILP
//!   certification.
//! * [`oracle`]: admissible-field sampling, random attacks and bound
//!   coverage estimation.

pub mod error;
pub mod geometry;
pub mod imaging;
pub mod linsolve;
pub mod oracle;
pub mod relaxation;
pub mod verifier;

pub use error::{Error, Result};
pub use geometry::{bounds_map, pixel_interval, AttackBudget, Norm, PixelBounds};
pub use imaging::{Image, VectorField};

/// Serde adapter writing `f64::INFINITY` as the string `"inf"`.
pub(crate) mod gamma_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => parse(&t).map_err(serde::de::Error::custom),
        }
    }

    pub fn parse(text: &str) -> Result<f64, String> {
        match text.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
            other => other.parse::<f64>().map_err(|_| format!("expected a number or \"inf\", got {text:?}")),
        }
    }
}

/// Parses a flow bound given as a number or `"inf"`.
pub fn parse_gamma(text: &str) -> Result<f64> {
    gamma_serde::parse(text).map_err(Error::Argument)
}
