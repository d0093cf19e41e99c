//! `{"q":[w,x,y,z],"t":[x,y,z]}` wire form. Numbers are written with exactly
//! 17 significant digits so a transform survives a text round trip bit-exactly.

use serde::de::Error as _;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{RigidTransform, Vec3};

/// Formats a float with 17 significant digits in JSON-compatible exponent form.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn raw(v: f64) -> Box<RawValue> {
    RawValue::from_string(fmt17(v)).expect("exponent-form float is valid JSON")
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation().quaternion();
        let t = self.translation();
        let mut s = serializer.serialize_struct("RigidTransform", 2)?;
        s.serialize_field("q", &[raw(q.w), raw(q.i), raw(q.j), raw(q.k)])?;
        s.serialize_field("t", &[raw(t.x), raw(t.y), raw(t.z)])?;
        s.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    q: [f64; 4],
    t: [f64; 3],
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let w = Wire::deserialize(deserializer)?;
        RigidTransform::from_wxyz(w.q, Vec3::from(w.t))
            .ok_or_else(|| D::Error::custom("quaternion must be finite and non-zero"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::testutil::random_transform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_wire_form() {
        let s = serde_json::to_string(&RigidTransform::identity()).unwrap();
        assert_eq!(
            s,
            "{\"q\":[1.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0],\
             \"t\":[0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0]}"
        );
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t = random_transform(&mut rng, 2000.0);
            let s = serde_json::to_string(&t).unwrap();
            let back: RigidTransform = serde_json::from_str(&s).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn rejects_degenerate_quaternion() {
        let err = serde_json::from_str::<RigidTransform>(r#"{"q":[0,0,0,0],"t":[0,0,0]}"#);
        assert!(err.is_err());
    }
}
