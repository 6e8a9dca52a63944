//! Attribute spaces, assignments over them, and catalog ingestion.
//!
//! A [`Schema`] is an ordered list of finite-domain attributes. Boolean
//! attributes are the two-value special case with domain `[true, false]`.
//! Assignments store one optional value index per attribute, so every
//! [`PartialAssignment`] is consistent by construction: an attribute can
//! never be bound to two values at once.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRUE_VALUE: &str = "true";
pub const FALSE_VALUE: &str = "false";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

impl Attribute {
    pub fn boolean(name: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            values: vec![TRUE_VALUE.to_string(), FALSE_VALUE.to_string()],
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn is_boolean(&self) -> bool {
        self.values.len() == 2
            && self.value_index(TRUE_VALUE).is_some()
            && self.value_index(FALSE_VALUE).is_some()
    }
}

/// Ordered finite-domain attribute space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    attributes: Vec<Attribute>,
    offsets: Vec<usize>,
    by_name: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct SchemaDoc {
    attributes: Vec<AttributeDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeDoc {
    name: String,
    #[serde(default)]
    values: Option<Vec<String>>,
}

#[derive(Serialize)]
struct SchemaDocOut<'a> {
    attributes: &'a [Attribute],
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(attributes.len());
        let mut offsets = Vec::with_capacity(attributes.len());
        let mut offset = 0;
        for (i, attr) in attributes.iter().enumerate() {
            if attr.values.len() < 2 {
                return Err(Error::DomainTooSmall {
                    attribute: attr.name.clone(),
                    size: attr.values.len(),
                });
            }
            if attr.values.len() > u16::MAX as usize {
                return Err(Error::SchemaFormat(format!(
                    "attribute `{}` has too many values",
                    attr.name
                )));
            }
            let mut seen = HashSet::new();
            for v in &attr.values {
                if !seen.insert(v.as_str()) {
                    return Err(Error::DuplicateValue {
                        attribute: attr.name.clone(),
                        value: v.clone(),
                    });
                }
            }
            if by_name.insert(attr.name.clone(), i).is_some() {
                return Err(Error::DuplicateAttribute(attr.name.clone()));
            }
            offsets.push(offset);
            offset += attr.values.len();
        }
        Ok(Schema {
            attributes,
            offsets,
            by_name,
        })
    }

    /// Schema of `n` boolean attributes named `X1..Xn`.
    pub fn boolean(n: usize) -> Self {
        Schema::new(
            (1..=n)
                .map(|i| Attribute::boolean(format!("X{i}")))
                .collect(),
        )
        .expect("generated names are unique")
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, index: usize) -> &Attribute {
        &self.attributes[index]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Resolves `attribute=value` to `(attribute index, value index)`.
    pub fn resolve(&self, attribute: &str, value: &str) -> Result<(usize, usize)> {
        let a = self
            .attribute_index(attribute)
            .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))?;
        let v = self.attributes[a]
            .value_index(value)
            .ok_or_else(|| Error::UnknownValue {
                attribute: attribute.to_string(),
                value: value.to_string(),
            })?;
        Ok((a, v))
    }

    /// Total number of indicator coordinates, one per attribute value.
    pub fn indicator_dimension(&self) -> usize {
        self.attributes.iter().map(|a| a.values.len()).sum()
    }

    /// Number of non-empty consistent partial assignments, `Π(|Dom|+1) − 1`.
    /// Saturates at `u128::MAX`.
    pub fn monomial_count(&self) -> u128 {
        self.attributes
            .iter()
            .try_fold(1u128, |acc, a| acc.checked_mul(a.values.len() as u128 + 1))
            .map(|p| p - 1)
            .unwrap_or(u128::MAX)
    }

    pub fn coordinate(&self, attribute: usize, value: usize) -> usize {
        self.offsets[attribute] + value
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SchemaDocOut {
            attributes: &self.attributes,
        })
        .expect("schema serializes")
    }
}

/// Parses a schema document:
///
/// ```json
/// {"attributes": [{"name": "X1"}, {"name": "decade", "values": ["80s", "90s"]}]}
/// ```
///
/// An attribute without `values` is boolean.
pub fn load_schema(document: &str) -> Result<Schema> {
    let doc: SchemaDoc =
        serde_json::from_str(document).map_err(|e| Error::SchemaFormat(e.to_string()))?;
    Schema::new(
        doc.attributes
            .into_iter()
            .map(|a| match a.values {
                Some(values) => Attribute {
                    name: a.name,
                    values,
                },
                None => Attribute::boolean(a.name),
            })
            .collect(),
    )
}

/// Assignment of values to a subset of the schema's attributes.
///
/// Ordering is lexicographic over attribute slots, with unbound sorting
/// before every value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartialAssignment {
    slots: Vec<Option<u16>>,
}

impl PartialAssignment {
    pub fn empty(attributes: usize) -> Self {
        PartialAssignment {
            slots: vec![None; attributes],
        }
    }

    /// Builds an assignment from `(attribute, value)` name pairs.
    pub fn from_names<'a, I>(schema: &Schema, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut p = PartialAssignment::empty(schema.len());
        for (a, v) in pairs {
            let (ai, vi) = schema.resolve(a, v)?;
            p.bind(ai, vi)
                .map_err(|_| Error::ConflictingBinding(a.to_string()))?;
        }
        Ok(p)
    }

    /// Builds a boolean assignment from signed 1-based literals: `3` binds
    /// attribute 3 to `true`, `-3` binds it to `false`.
    pub fn from_literals(schema: &Schema, literals: &[i32]) -> Result<Self> {
        let mut p = PartialAssignment::empty(schema.len());
        for &lit in literals {
            let a = lit.unsigned_abs() as usize - 1;
            let attr = schema
                .attributes
                .get(a)
                .ok_or_else(|| Error::UnknownAttribute(format!("#{}", a + 1)))?;
            let value = if lit > 0 { TRUE_VALUE } else { FALSE_VALUE };
            let v = attr
                .value_index(value)
                .ok_or_else(|| Error::NotBoolean(attr.name.clone()))?;
            p.bind(a, v)
                .map_err(|_| Error::ConflictingBinding(attr.name.clone()))?;
        }
        Ok(p)
    }

    /// Binds `attribute` to `value`. Rebinding to the same value is a no-op;
    /// rebinding to a different value fails.
    pub fn bind(&mut self, attribute: usize, value: usize) -> std::result::Result<(), usize> {
        match self.slots[attribute] {
            Some(existing) if existing as usize != value => Err(existing as usize),
            _ => {
                self.slots[attribute] = Some(value as u16);
                Ok(())
            }
        }
    }

    pub fn unbind(&mut self, attribute: usize) {
        self.slots[attribute] = None;
    }

    pub fn get(&self, attribute: usize) -> Option<usize> {
        self.slots[attribute].map(usize::from)
    }

    pub fn width(&self) -> usize {
        self.slots.len()
    }

    pub fn bound_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn bindings(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(a, v)| v.map(|v| (a, v as usize)))
    }

    /// Number of attributes bound to the same value in both assignments.
    pub fn agreement(&self, other: &PartialAssignment) -> usize {
        debug_assert_eq!(self.slots.len(), other.slots.len());
        self.slots
            .iter()
            .zip(&other.slots)
            .filter(|(a, b)| a.is_some() && a == b)
            .count()
    }

    /// True when every binding of `self` also appears in `other`.
    pub fn is_subassignment_of(&self, other: &PartialAssignment) -> bool {
        self.slots
            .iter()
            .zip(&other.slots)
            .all(|(a, b)| a.is_none() || a == b)
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.slots.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "assignment spans {} attributes, schema has {}",
                self.slots.len(),
                schema.len()
            )));
        }
        for (a, v) in self.bindings() {
            if v >= schema.attributes[a].values.len() {
                return Err(Error::UnknownValue {
                    attribute: schema.attributes[a].name.clone(),
                    value: format!("#{v}"),
                });
            }
        }
        Ok(())
    }

    pub fn to_names(&self, schema: &Schema) -> BTreeMap<String, String> {
        self.bindings()
            .map(|(a, v)| {
                let attr = &schema.attributes[a];
                (attr.name.clone(), attr.values[v].clone())
            })
            .collect()
    }

    /// Renders the assignment as a DSL conjunction.
    pub fn display<'a>(&'a self, schema: &'a Schema) -> impl fmt::Display + 'a {
        AssignmentDisplay { p: self, schema }
    }
}

struct AssignmentDisplay<'a> {
    p: &'a PartialAssignment,
    schema: &'a Schema,
}

impl fmt::Display for AssignmentDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.p.is_empty() {
            return f.write_str("(empty)");
        }
        for (i, (a, v)) in self.p.bindings().enumerate() {
            if i > 0 {
                f.write_str(" and ")?;
            }
            let attr = &self.schema.attributes[a];
            write!(f, "{}={}", attr.name, attr.values[v])?;
        }
        Ok(())
    }
}

/// Sparse per-value indicator encoding of an assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorVector {
    pub dimension: usize,
    /// Active coordinates in ascending order; each has weight 1.
    pub active: Vec<usize>,
}

impl IndicatorVector {
    pub fn dot(&self, other: &IndicatorVector) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.active.len() && j < other.active.len() {
            match self.active[i].cmp(&other.active[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

pub fn encode_indicator(p: &PartialAssignment, schema: &Schema) -> IndicatorVector {
    IndicatorVector {
        dimension: schema.indicator_dimension(),
        active: p.bindings().map(|(a, v)| schema.coordinate(a, v)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alternative {
    pub id: String,
    pub assignment: PartialAssignment,
}

/// Immutable list of complete alternatives over a schema.
#[derive(Debug, Clone)]
pub struct Catalog {
    schema: Arc<Schema>,
    items: Vec<Alternative>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(schema: Arc<Schema>, items: Vec<Alternative>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            item.assignment.validate(&schema)?;
            if !item.assignment.is_complete() {
                return Err(Error::CatalogRow {
                    row: i + 1,
                    message: format!("item `{}` is not a complete assignment", item.id),
                });
            }
            if by_id.insert(item.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        Ok(Catalog {
            schema,
            items,
            by_id,
        })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn items(&self) -> &[Alternative] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Alternative> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Writes the catalog back as delimited text with an `id` column first.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id"];
        header.extend(self.schema.attributes().iter().map(|a| a.name.as_str()));
        w.write_record(&header).expect("in-memory write");
        for item in &self.items {
            let mut row = vec![item.id.as_str()];
            for (a, v) in item.assignment.bindings() {
                row.push(self.schema.attribute(a).values[v].as_str());
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

/// Parses a delimited catalog: a header row with an `id` column and one
/// column per attribute, in any order.
pub fn load_catalog(document: &str, schema: Arc<Schema>) -> Result<Catalog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(document.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::CatalogFormat(e.to_string()))?
        .clone();

    let mut id_column = None;
    let mut columns = Vec::with_capacity(header.len());
    for (c, name) in header.iter().enumerate() {
        if name == "id" {
            if id_column.replace(c).is_some() {
                return Err(Error::CatalogFormat("duplicate `id` column".into()));
            }
            columns.push(None);
            continue;
        }
        let a = schema
            .attribute_index(name)
            .ok_or_else(|| Error::CatalogFormat(format!("unknown attribute column `{name}`")))?;
        if columns.contains(&Some(a)) {
            return Err(Error::CatalogFormat(format!("duplicate column `{name}`")));
        }
        columns.push(Some(a));
    }
    let id_column = id_column.ok_or_else(|| Error::CatalogFormat("missing `id` column".into()))?;
    for (a, attr) in schema.attributes().iter().enumerate() {
        if !columns.contains(&Some(a)) {
            return Err(Error::CatalogFormat(format!(
                "missing attribute column `{}`",
                attr.name
            )));
        }
    }

    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::CatalogRow {
            row,
            message: e.to_string(),
        })?;
        let mut assignment = PartialAssignment::empty(schema.len());
        for (c, field) in record.iter().enumerate() {
            if let Some(Some(a)) = columns.get(c) {
                let attr = schema.attribute(*a);
                let v = attr.value_index(field).ok_or_else(|| Error::CatalogRow {
                    row,
                    message: format!(
                        "value `{field}` is not in the domain of attribute `{}`",
                        attr.name
                    ),
                })?;
                assignment.bind(*a, v).expect("columns are distinct");
            }
        }
        let id = record[id_column].to_string();
        if !ids.insert(id.clone()) {
            return Err(Error::CatalogRow {
                row,
                message: format!("duplicate item id `{id}`"),
            });
        }
        items.push(Alternative { id, assignment });
    }
    Catalog::new(schema, items)
}

/// Parses a catalog given as structured records, e.g.
/// `[{"id": "a", "X1": "true", "X2": "false"}]`.
pub fn load_catalog_records(
    records: &[BTreeMap<String, String>],
    schema: Arc<Schema>,
) -> Result<Catalog> {
    let mut items = Vec::with_capacity(records.len());
    for (r, record) in records.iter().enumerate() {
        let row = r + 1;
        let id = record.get("id").ok_or_else(|| Error::CatalogRow {
            row,
            message: "missing `id`".into(),
        })?;
        let mut assignment = PartialAssignment::empty(schema.len());
        for (key, value) in record {
            if key == "id" {
                continue;
            }
            let (a, v) = schema.resolve(key, value).map_err(|e| Error::CatalogRow {
                row,
                message: e.to_string(),
            })?;
            assignment.bind(a, v).expect("map keys are distinct");
        }
        if let Some(missing) = (0..schema.len()).find(|&a| assignment.get(a).is_none()) {
            return Err(Error::CatalogRow {
                row,
                message: format!("missing attribute `{}`", schema.attribute(missing).name),
            });
        }
        items.push(Alternative {
            id: id.clone(),
            assignment,
        });
    }
    Catalog::new(schema, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn movie_schema() -> Schema {
        let mut attrs = vec![Attribute {
            name: "decade".into(),
            values: ["40s", "50s", "60s", "70s", "80s", "90s"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }];
        for g in 0..10 {
            attrs.push(Attribute::boolean(format!("genre{g}")));
        }
        Schema::new(attrs).unwrap()
    }

    #[test]
    fn indicator_dimensions() {
        assert_eq!(Schema::boolean(4).indicator_dimension(), 8);
        let one = load_schema(r#"{"attributes":[{"name":"A","values":["a","b"]}]}"#).unwrap();
        assert_eq!(one.indicator_dimension(), 2);
        assert_eq!(movie_schema().indicator_dimension(), 26);
    }

    #[test]
    fn schema_rejects_duplicates_and_tiny_domains() {
        let dup = r#"{"attributes":[{"name":"A"},{"name":"A"}]}"#;
        assert!(matches!(
            load_schema(dup),
            Err(Error::DuplicateAttribute(_))
        ));
        let dupv = r#"{"attributes":[{"name":"A","values":["x","x"]}]}"#;
        assert!(matches!(
            load_schema(dupv),
            Err(Error::DuplicateValue { .. })
        ));
        let empty = r#"{"attributes":[{"name":"A","values":[]}]}"#;
        assert!(matches!(
            load_schema(empty),
            Err(Error::DomainTooSmall { .. })
        ));
    }

    #[test]
    fn schema_json_round_trip() {
        let s = movie_schema();
        assert_eq!(load_schema(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn catalog_loads_and_validates() {
        let schema = Arc::new(Schema::boolean(2));
        let cat = load_catalog("id,X1,X2\na,true,false\nb,false,false\n", schema.clone()).unwrap();
        assert_eq!(cat.len(), 2);
        assert!(cat.items().iter().all(|i| i.assignment.is_complete()));

        let err = load_catalog("id,X1,X2\na,true,maybe\n", schema.clone()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("X2"), "{msg}");

        assert!(load_catalog("id,X1\na,true\n", schema.clone()).is_err());
        let dup = load_catalog("id,X1,X2\na,true,true\na,false,true\n", schema.clone());
        assert!(dup.unwrap_err().to_string().contains("duplicate item id"));
        // Values match byte-exactly.
        assert!(load_catalog("id,X1,X2\na, true,false\n", schema).is_err());
    }

    #[test]
    fn catalog_csv_round_trip() {
        let schema = Arc::new(movie_schema());
        let mut csv = String::from("id,decade");
        for g in 0..10 {
            csv.push_str(&format!(",genre{g}"));
        }
        csv.push('\n');
        csv.push_str("m1,90s,true,false,false,false,false,false,false,false,false,true\n");
        let cat = load_catalog(&csv, schema.clone()).unwrap();
        let again = load_catalog(&cat.to_csv(), schema).unwrap();
        assert_eq!(cat.items(), again.items());
    }

    #[test]
    fn indicator_encoding() {
        let s = Schema::boolean(2);
        let p = PartialAssignment::from_literals(&s, &[1, -2]).unwrap();
        let v = encode_indicator(&p, &s);
        assert_eq!(v.active, vec![s.coordinate(0, 0), s.coordinate(1, 1)]);
        let partial = PartialAssignment::from_literals(&s, &[1]).unwrap();
        assert_eq!(encode_indicator(&partial, &s).active.len(), 1);
        assert!(encode_indicator(&PartialAssignment::empty(2), &s)
            .active
            .is_empty());
    }

    #[test]
    fn conflicting_binding_is_rejected() {
        let s = Schema::boolean(2);
        assert!(PartialAssignment::from_literals(&s, &[1, -1]).is_err());
        assert!(PartialAssignment::from_literals(&s, &[1, 1]).is_ok());
    }
}
