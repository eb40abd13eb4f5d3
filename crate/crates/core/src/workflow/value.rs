use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Type tag of a [`VariableValue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueTag {
    Bool,
    Int64,
    Float64,
    Text,
}

impl ValueTag {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueTag::Int64 | ValueTag::Float64)
    }

    /// Value an unwritten port holds.
    pub fn default_value(self) -> VariableValue {
        match self {
            ValueTag::Bool => VariableValue::Bool(false),
            ValueTag::Int64 => VariableValue::Int64(0),
            ValueTag::Float64 => VariableValue::Float64(0.0),
            ValueTag::Text => VariableValue::Text(String::new()),
        }
    }
}

impl fmt::Display for ValueTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueTag::Bool => "bool",
            ValueTag::Int64 => "int64",
            ValueTag::Float64 => "float64",
            ValueTag::Text => "text",
        };
        f.write_str(s)
    }
}

/// An equipment variable value.
///
/// Serialized as `{"tag": "int64", "value": 5}`. Float payloads are always
/// finite; constructors that could produce NaN or infinities go through
/// [`VariableValue::float`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "value", rename_all = "lowercase")]
pub enum VariableValue {
    Bool(bool),
    Int64(i64),
    Float64(f64),
    Text(String),
}

impl VariableValue {
    pub fn tag(&self) -> ValueTag {
        match self {
            VariableValue::Bool(_) => ValueTag::Bool,
            VariableValue::Int64(_) => ValueTag::Int64,
            VariableValue::Float64(_) => ValueTag::Float64,
            VariableValue::Text(_) => ValueTag::Text,
        }
    }

    pub fn float(v: f64) -> Result<Self, ConversionError> {
        if v.is_finite() {
            Ok(VariableValue::Float64(v))
        } else {
            Err(ConversionError::NonFinite)
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            VariableValue::Float64(v) => v.is_finite(),
            _ => true,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            VariableValue::Int64(v) => Some(v as f64),
            VariableValue::Float64(v) => Some(v),
            _ => None,
        }
    }

    fn render_text(&self) -> String {
        match self {
            VariableValue::Bool(b) => b.to_string(),
            VariableValue::Int64(v) => v.to_string(),
            VariableValue::Float64(v) => v.to_string(),
            VariableValue::Text(s) => s.clone(),
        }
    }
}

impl fmt::Display for VariableValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.tag(), self.render_text())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConversionError {
    #[error("converter {converter} cannot take a {tag} value")]
    IllegalTag { converter: &'static str, tag: ValueTag },
    #[error("cannot cast {from} to {to}")]
    IllegalCast { from: ValueTag, to: ValueTag },
    #[error("text {0:?} is not numeric")]
    NotNumeric(String),
    #[error("value out of range for int64")]
    OutOfRange,
    #[error("conversion produced a non-finite float")]
    NonFinite,
}

/// Stateless value converter attached to a link.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueConverter {
    Identity,
    /// Cast to `target`. Numeric tags cast to each other, anything casts to
    /// text, and text casts to a numeric tag when it parses.
    Cast { target: ValueTag },
    /// Multiply a numeric value. Integers are rounded back to int64.
    Scale { factor: f64 },
    /// Add to a numeric value. Integers are rounded back to int64.
    Offset { delta: f64 },
    BoolNegate,
}

impl ValueConverter {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ValueConverter::Identity => "identity",
            ValueConverter::Cast { .. } => "cast",
            ValueConverter::Scale { .. } => "scale",
            ValueConverter::Offset { .. } => "offset",
            ValueConverter::BoolNegate => "boolNegate",
        }
    }

    /// Tag produced when fed a value tagged `input`, if that input is legal.
    pub fn output_tag(&self, input: ValueTag) -> Option<ValueTag> {
        match self {
            ValueConverter::Identity => Some(input),
            ValueConverter::Cast { target } => cast_is_legal(input, *target).then_some(*target),
            ValueConverter::Scale { .. } | ValueConverter::Offset { .. } => {
                input.is_numeric().then_some(input)
            }
            ValueConverter::BoolNegate => (input == ValueTag::Bool).then_some(ValueTag::Bool),
        }
    }

    pub fn apply(&self, value: &VariableValue) -> Result<VariableValue, ConversionError> {
        apply_converter(self, value)
    }
}

pub fn cast_is_legal(from: ValueTag, to: ValueTag) -> bool {
    from == to
        || to == ValueTag::Text
        || (from.is_numeric() && to.is_numeric())
        || (from == ValueTag::Text && to.is_numeric())
}

pub fn apply_converter(
    converter: &ValueConverter,
    value: &VariableValue,
) -> Result<VariableValue, ConversionError> {
    let illegal = || ConversionError::IllegalTag {
        converter: converter.kind_name(),
        tag: value.tag(),
    };
    match converter {
        ValueConverter::Identity => Ok(value.clone()),
        ValueConverter::Cast { target } => cast(value, *target),
        ValueConverter::Scale { factor } => arithmetic(value, |x| x * factor).ok_or_else(illegal)?,
        ValueConverter::Offset { delta } => arithmetic(value, |x| x + delta).ok_or_else(illegal)?,
        ValueConverter::BoolNegate => match value {
            VariableValue::Bool(b) => Ok(VariableValue::Bool(!b)),
            _ => Err(illegal()),
        },
    }
}

fn arithmetic(
    value: &VariableValue,
    op: impl Fn(f64) -> f64,
) -> Option<Result<VariableValue, ConversionError>> {
    match *value {
        VariableValue::Float64(v) => Some(VariableValue::float(op(v))),
        VariableValue::Int64(v) => Some(float_to_int(op(v as f64))),
        _ => None,
    }
}

fn float_to_int(v: f64) -> Result<VariableValue, ConversionError> {
    if !v.is_finite() {
        return Err(ConversionError::NonFinite);
    }
    let r = v.round();
    // i64::MAX as f64 rounds up to 2^63, which is already out of range.
    if r < -(2f64.powi(63)) || r >= 2f64.powi(63) {
        return Err(ConversionError::OutOfRange);
    }
    Ok(VariableValue::Int64(r as i64))
}

fn cast(value: &VariableValue, target: ValueTag) -> Result<VariableValue, ConversionError> {
    let from = value.tag();
    if from == target {
        return Ok(value.clone());
    }
    if !cast_is_legal(from, target) {
        return Err(ConversionError::IllegalCast { from, to: target });
    }
    match (value, target) {
        (_, ValueTag::Text) => Ok(VariableValue::Text(value.render_text())),
        (VariableValue::Int64(v), ValueTag::Float64) => Ok(VariableValue::Float64(*v as f64)),
        (VariableValue::Float64(v), ValueTag::Int64) => float_to_int(v.trunc()),
        (VariableValue::Text(s), ValueTag::Int64) => {
            let t = s.trim();
            if let Ok(v) = t.parse::<i64>() {
                Ok(VariableValue::Int64(v))
            } else {
                let f: f64 = t
                    .parse()
                    .map_err(|_| ConversionError::NotNumeric(s.clone()))?;
                float_to_int(f.trunc())
            }
        }
        (VariableValue::Text(s), ValueTag::Float64) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| ConversionError::NotNumeric(s.clone()))
            .and_then(VariableValue::float),
        _ => Err(ConversionError::IllegalCast { from, to: target }),
    }
}
