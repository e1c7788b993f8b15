//! Canonical payload serialization, digests and seed derivation.
//!
//! Payloads are `serde_json::Value` trees. The canonical text form sorts
//! object keys, omits insignificant whitespace and renders floats as the
//! shortest decimal that round-trips. Cache keys and task ids are hashes of
//! that text.

use serde::ser::{self, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fmt;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SerializationError {
    #[error("non-finite number at {path}")]
    NonFinite { path: String },
    #[error("{0}")]
    Other(String),
}

/// Convert a value to a payload, rejecting NaN and infinities instead of
/// letting them degrade to `null`.
pub fn to_payload<T: Serialize + ?Sized>(value: &T) -> Result<Value, SerializationError> {
    value.serialize(FiniteCheck { path: String::from("$") })?;
    serde_json::to_value(value).map_err(|e| SerializationError::Other(e.to_string()))
}

/// Canonical compact text of a payload.
pub fn canonical_string(value: &Value) -> String {
    // serde_json's default map is ordered by key, and its float output is
    // shortest round-trip.
    serde_json::to_string(value).expect("Value always serializes")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_value(value: &Value) -> String {
    sha256_hex(canonical_string(value).as_bytes())
}

/// Independent 64-bit sub-seed for stream `index` of a master seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    first_u64(&h.finalize())
}

/// Sub-seed keyed by a label (e.g. a site id).
pub fn derive_seed_str(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    first_u64(&h.finalize())
}

fn first_u64(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    u64::from_le_bytes(b)
}

/// Render a float for CSV output: shortest round-trip decimal.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // normalizes -0
        return "0".to_string();
    }
    format!("{v}")
}

// --- finite-number checker -------------------------------------------------

struct FiniteCheck {
    path: String,
}

impl ser::Error for SerializationError {
    fn custom<T: fmt::Display>(msg: T) -> Self {
        SerializationError::Other(msg.to_string())
    }
}

type R = Result<(), SerializationError>;

impl FiniteCheck {
    fn float(&self, v: f64) -> R {
        if v.is_finite() {
            Ok(())
        } else {
            Err(SerializationError::NonFinite { path: self.path.clone() })
        }
    }
    fn child(&self, seg: impl fmt::Display) -> FiniteCheck {
        FiniteCheck { path: format!("{}.{}", self.path, seg) }
    }
}

struct Compound {
    path: String,
    index: usize,
}

impl Compound {
    fn next(&mut self) -> FiniteCheck {
        let c = FiniteCheck { path: format!("{}[{}]", self.path, self.index) };
        self.index += 1;
        c
    }
}

impl ser::Serializer for FiniteCheck {
    type Ok = ();
    type Error = SerializationError;
    type SerializeSeq = Compound;
    type SerializeTuple = Compound;
    type SerializeTupleStruct = Compound;
    type SerializeTupleVariant = Compound;
    type SerializeMap = Compound;
    type SerializeStruct = Compound;
    type SerializeStructVariant = Compound;

    fn serialize_bool(self, _: bool) -> R {
        Ok(())
    }
    fn serialize_i8(self, _: i8) -> R {
        Ok(())
    }
    fn serialize_i16(self, _: i16) -> R {
        Ok(())
    }
    fn serialize_i32(self, _: i32) -> R {
        Ok(())
    }
    fn serialize_i64(self, _: i64) -> R {
        Ok(())
    }
    fn serialize_u8(self, _: u8) -> R {
        Ok(())
    }
    fn serialize_u16(self, _: u16) -> R {
        Ok(())
    }
    fn serialize_u32(self, _: u32) -> R {
        Ok(())
    }
    fn serialize_u64(self, _: u64) -> R {
        Ok(())
    }
    fn serialize_f32(self, v: f32) -> R {
        self.float(v as f64)
    }
    fn serialize_f64(self, v: f64) -> R {
        self.float(v)
    }
    fn serialize_char(self, _: char) -> R {
        Ok(())
    }
    fn serialize_str(self, _: &str) -> R {
        Ok(())
    }
    fn serialize_bytes(self, _: &[u8]) -> R {
        Ok(())
    }
    fn serialize_none(self) -> R {
        Ok(())
    }
    fn serialize_some<T: ?Sized + Serialize>(self, value: &T) -> R {
        value.serialize(self)
    }
    fn serialize_unit(self) -> R {
        Ok(())
    }
    fn serialize_unit_struct(self, _: &'static str) -> R {
        Ok(())
    }
    fn serialize_unit_variant(self, _: &'static str, _: u32, _: &'static str) -> R {
        Ok(())
    }
    fn serialize_newtype_struct<T: ?Sized + Serialize>(self, _: &'static str, value: &T) -> R {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: ?Sized + Serialize>(
        self,
        _: &'static str,
        _: u32,
        variant: &'static str,
        value: &T,
    ) -> R {
        value.serialize(self.child(variant))
    }
    fn serialize_seq(self, _: Option<usize>) -> Result<Compound, SerializationError> {
        Ok(Compound { path: self.path, index: 0 })
    }
    fn serialize_tuple(self, _: usize) -> Result<Compound, SerializationError> {
        Ok(Compound { path: self.path, index: 0 })
    }
    fn serialize_tuple_struct(self, _: &'static str, _: usize) -> Result<Compound, SerializationError> {
        Ok(Compound { path: self.path, index: 0 })
    }
    fn serialize_tuple_variant(
        self,
        _: &'static str,
        _: u32,
        _: &'static str,
        _: usize,
    ) -> Result<Compound, SerializationError> {
        Ok(Compound { path: self.path, index: 0 })
    }
    fn serialize_map(self, _: Option<usize>) -> Result<Compound, SerializationError> {
        Ok(Compound { path: self.path, index: 0 })
    }
    fn serialize_struct(self, _: &'static str, _: usize) -> Result<Compound, SerializationError> {
        Ok(Compound { path: self.path, index: 0 })
    }
    fn serialize_struct_variant(
        self,
        _: &'static str,
        _: u32,
        _: &'static str,
        _: usize,
    ) -> Result<Compound, SerializationError> {
        Ok(Compound { path: self.path, index: 0 })
    }
}

impl ser::SerializeSeq for Compound {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_element<T: ?Sized + Serialize>(&mut self, value: &T) -> R {
        value.serialize(self.next())
    }
    fn end(self) -> R {
        Ok(())
    }
}

impl ser::SerializeTuple for Compound {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_element<T: ?Sized + Serialize>(&mut self, value: &T) -> R {
        value.serialize(self.next())
    }
    fn end(self) -> R {
        Ok(())
    }
}

impl ser::SerializeTupleStruct for Compound {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_field<T: ?Sized + Serialize>(&mut self, value: &T) -> R {
        value.serialize(self.next())
    }
    fn end(self) -> R {
        Ok(())
    }
}

impl ser::SerializeTupleVariant for Compound {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_field<T: ?Sized + Serialize>(&mut self, value: &T) -> R {
        value.serialize(self.next())
    }
    fn end(self) -> R {
        Ok(())
    }
}

impl ser::SerializeMap for Compound {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_key<T: ?Sized + Serialize>(&mut self, _: &T) -> R {
        Ok(())
    }
    fn serialize_value<T: ?Sized + Serialize>(&mut self, value: &T) -> R {
        value.serialize(self.next())
    }
    fn end(self) -> R {
        Ok(())
    }
}

impl ser::SerializeStruct for Compound {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_field<T: ?Sized + Serialize>(&mut self, key: &'static str, value: &T) -> R {
        value.serialize(FiniteCheck { path: format!("{}.{}", self.path, key) })
    }
    fn end(self) -> R {
        Ok(())
    }
}

impl ser::SerializeStructVariant for Compound {
    type Ok = ();
    type Error = SerializationError;
    fn serialize_field<T: ?Sized + Serialize>(&mut self, key: &'static str, value: &T) -> R {
        value.serialize(FiniteCheck { path: format!("{}.{}", self.path, key) })
    }
    fn end(self) -> R {
        Ok(())
    }
}
