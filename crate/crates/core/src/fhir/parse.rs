use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::model::*;
use super::ParseError;
use crate::time::{format_date, format_timestamp, parse_date, parse_timestamp};

/// Parses one FHIR resource document into a validated envelope.
pub fn parse_resource(json_text: &str) -> Result<ResourceEnvelope, ParseError> {
    let value: Value =
        serde_json::from_str(json_text).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    parse_value(&value)
}

/// Same as [`parse_resource`] for an already-decoded JSON value.
pub fn parse_value(value: &Value) -> Result<ResourceEnvelope, ParseError> {
    let root = Node::root(value)?;
    let resource_type = root.req_str("resourceType")?;
    let kind = ResourceKind::from_resource_type(resource_type)
        .ok_or_else(|| ParseError::UnsupportedResourceType(resource_type.to_string()))?;
    let resource = match kind {
        ResourceKind::Observation => Resource::Observation(parse_observation(&root)?),
        ResourceKind::QuestionnaireResponse => {
            Resource::QuestionnaireResponse(parse_questionnaire_response(&root)?)
        }
        ResourceKind::Questionnaire => Resource::Questionnaire(parse_questionnaire(&root)?),
        ResourceKind::Patient => Resource::Patient(parse_patient(&root)?),
    };
    resource.validate()?;
    Ok(ResourceEnvelope {
        resource,
        raw_source_hash: content_hash(value),
    })
}

/// Serializes `value` with object keys sorted at every level and no whitespace.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Hex SHA-256 of the canonical serialization.
pub fn content_hash(value: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(value).as_bytes()))
}

/// A JSON object together with its path from the document root.
struct Node<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Node<'a> {
    fn root(value: &'a Value) -> Result<Self, ParseError> {
        match value {
            Value::Object(map) => Ok(Node {
                map,
                path: String::new(),
            }),
            _ => Err(ParseError::schema(
                "resourceType",
                "document is not a JSON object",
            )),
        }
    }

    fn child_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn opt_str(&self, key: &str) -> Result<Option<&'a str>, ParseError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(ParseError::schema(
                self.child_path(key),
                "expected a string",
            )),
        }
    }

    fn req_str(&self, key: &str) -> Result<&'a str, ParseError> {
        self.opt_str(key)?
            .ok_or_else(|| ParseError::schema(self.child_path(key), "required field missing"))
    }

    fn opt_num(&self, key: &str) -> Result<Option<f64>, ParseError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Number(n)) => {
                n.as_f64()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or_else(|| {
                        ParseError::schema(self.child_path(key), "expected a finite number")
                    })
            }
            Some(_) => Err(ParseError::schema(
                self.child_path(key),
                "expected a number",
            )),
        }
    }

    fn req_num(&self, key: &str) -> Result<f64, ParseError> {
        self.opt_num(key)?
            .ok_or_else(|| ParseError::schema(self.child_path(key), "required field missing"))
    }

    fn opt_obj(&self, key: &str) -> Result<Option<Node<'a>>, ParseError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Object(map)) => Ok(Some(Node {
                map,
                path: self.child_path(key),
            })),
            Some(_) => Err(ParseError::schema(
                self.child_path(key),
                "expected an object",
            )),
        }
    }

    fn req_obj(&self, key: &str) -> Result<Node<'a>, ParseError> {
        self.opt_obj(key)?
            .ok_or_else(|| ParseError::schema(self.child_path(key), "required field missing"))
    }

    /// Objects of an array field; an absent field yields an empty list.
    fn objects(&self, key: &str) -> Result<Vec<Node<'a>>, ParseError> {
        let items = match self.get(key) {
            None => return Ok(Vec::new()),
            Some(Value::Array(items)) => items,
            Some(_) => {
                return Err(ParseError::schema(
                    self.child_path(key),
                    "expected an array",
                ))
            }
        };
        items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let path = format!("{}[{i}]", self.child_path(key));
                match item {
                    Value::Object(map) => Ok(Node { map, path }),
                    _ => Err(ParseError::schema(path, "expected an object")),
                }
            })
            .collect()
    }

    fn timestamp(&self, key: &str) -> Result<Option<DateTime<Utc>>, ParseError> {
        match self.opt_str(key)? {
            None => Ok(None),
            Some(s) => parse_timestamp(s).map(Some).ok_or_else(|| {
                ParseError::schema(self.child_path(key), "invalid ISO-8601 timestamp")
            }),
        }
    }
}

fn parse_coding(node: &Node) -> Result<Coding, ParseError> {
    Ok(Coding {
        system: node.opt_str("system")?.unwrap_or_default().to_string(),
        code: node.req_str("code")?.to_string(),
        display: node.opt_str("display")?.map(str::to_string),
    })
}

fn parse_codings(concept: &Node) -> Result<Vec<Coding>, ParseError> {
    concept
        .objects("coding")?
        .iter()
        .map(parse_coding)
        .collect()
}

fn parse_quantity(node: &Node) -> Result<Quantity, ParseError> {
    let unit = match node.opt_str("unit")? {
        Some(u) => u,
        None => node.opt_str("code")?.unwrap_or_default(),
    };
    Ok(Quantity {
        value: node.req_num("value")?,
        unit: unit.to_string(),
    })
}

fn parse_sampled_data(node: &Node) -> Result<SampledData, ParseError> {
    let dimensions = node.req_num("dimensions")?;
    if dimensions.fract() != 0.0 || dimensions < 1.0 || dimensions > u32::MAX as f64 {
        return Err(ParseError::schema(
            node.child_path("dimensions"),
            "expected a positive integer",
        ));
    }
    Ok(SampledData {
        origin: parse_quantity(&node.req_obj("origin")?)?,
        period_ms: node.req_num("period")?,
        factor: node.opt_num("factor")?.unwrap_or(1.0),
        dimensions: dimensions as u32,
        data: node.opt_str("data")?.unwrap_or_default().to_string(),
    })
}

fn subject_id(node: &Node) -> Result<String, ParseError> {
    let reference = node.req_obj("subject")?.req_str("reference")?;
    Ok(reference
        .strip_prefix("Patient/")
        .unwrap_or(reference)
        .to_string())
}

fn parse_observation(root: &Node) -> Result<Observation, ParseError> {
    let code = parse_codings(&root.req_obj("code")?)?;

    let (effective_start, effective_end) = if let Some(period) = root.opt_obj("effectivePeriod")? {
        let start = period
            .timestamp("start")?
            .ok_or_else(|| ParseError::schema("effectivePeriod.start", "required field missing"))?;
        (start, period.timestamp("end")?)
    } else if let Some(ts) = root.timestamp("effectiveDateTime")? {
        (ts, None)
    } else if let Some(ts) = root.timestamp("effectiveInstant")? {
        (ts, None)
    } else {
        return Err(ParseError::schema("effective[x]", "required field missing"));
    };

    let value_quantity = root
        .opt_obj("valueQuantity")?
        .map(|q| parse_quantity(&q))
        .transpose()?;

    let mut components = Vec::new();
    for comp in root.objects("component")? {
        let code = parse_codings(&comp.req_obj("code")?)?;
        let value = if let Some(q) = comp.opt_obj("valueQuantity")? {
            ComponentValue::Quantity(parse_quantity(&q)?)
        } else if let Some(sd) = comp.opt_obj("valueSampledData")? {
            ComponentValue::SampledData(parse_sampled_data(&sd)?)
        } else if let Some(s) = comp.opt_str("valueString")? {
            ComponentValue::String(s.to_string())
        } else {
            return Err(ParseError::schema(
                comp.child_path("value[x]"),
                "expected valueQuantity, valueSampledData or valueString",
            ));
        };
        components.push(Component { code, value });
    }

    let device = match root.opt_obj("device")? {
        None => None,
        Some(dev) => {
            let display = dev.opt_str("display")?.map(str::to_string);
            if let Some(ident) = dev.opt_obj("identifier")? {
                Some(Coding {
                    system: ident.opt_str("system")?.unwrap_or_default().to_string(),
                    code: ident.req_str("value")?.to_string(),
                    display,
                })
            } else if let Some(reference) = dev.opt_str("reference")? {
                Some(Coding {
                    system: DEVICE_REFERENCE_SYSTEM.to_string(),
                    code: reference.to_string(),
                    display,
                })
            } else {
                display.map(|d| Coding {
                    system: DEVICE_DISPLAY_SYSTEM.to_string(),
                    code: d.clone(),
                    display: Some(d),
                })
            }
        }
    };

    let category = match root.objects("category")?.first() {
        Some(cat) => parse_codings(cat)?.into_iter().next(),
        None => None,
    };

    Ok(Observation {
        resource_id: root.req_str("id")?.to_string(),
        subject_id: subject_id(root)?,
        code,
        effective_start,
        effective_end,
        value_quantity,
        components,
        device,
        category,
    })
}

/// Pseudo-system for devices identified only by a reference.
pub const DEVICE_REFERENCE_SYSTEM: &str = "urn:fhirflow:device-reference";
/// Pseudo-system for devices identified only by a display string.
pub const DEVICE_DISPLAY_SYSTEM: &str = "urn:fhirflow:device-display";

fn answer_of(item: &Node) -> Result<Option<(String, Option<String>)>, ParseError> {
    let answers = item.objects("answer")?;
    let Some(answer) = answers.first() else {
        return Ok(None);
    };
    if let Some(coding) = answer.opt_obj("valueCoding")? {
        let c = parse_coding(&coding)?;
        return Ok(Some((c.code, c.display)));
    }
    if let Some(s) = answer.opt_str("valueString")? {
        return Ok(Some((s.to_string(), Some(s.to_string()))));
    }
    for key in ["valueDate", "valueDateTime", "valueTime", "valueUri"] {
        if let Some(s) = answer.opt_str(key)? {
            return Ok(Some((s.to_string(), None)));
        }
    }
    for key in ["valueInteger", "valueDecimal"] {
        if let Some(v) = answer.get(key) {
            return match v {
                Value::Number(n) => Ok(Some((n.to_string(), None))),
                _ => Err(ParseError::schema(
                    answer.child_path(key),
                    "expected a number",
                )),
            };
        }
    }
    if let Some(v) = answer.get("valueBoolean") {
        return match v {
            Value::Bool(b) => Ok(Some((b.to_string(), None))),
            _ => Err(ParseError::schema(
                answer.child_path("valueBoolean"),
                "expected a boolean",
            )),
        };
    }
    Err(ParseError::schema(
        answer.child_path("value[x]"),
        "unsupported answer type",
    ))
}

fn collect_answers(node: &Node, out: &mut Vec<AnswerItem>) -> Result<(), ParseError> {
    for item in node.objects("item")? {
        if let Some((answer_code, answer_text)) = answer_of(&item)? {
            out.push(AnswerItem {
                link_id: item.req_str("linkId")?.to_string(),
                question_text: item.opt_str("text")?.map(str::to_string),
                answer_code,
                answer_text,
            });
        }
        collect_answers(&item, out)?;
    }
    Ok(())
}

fn parse_questionnaire_response(root: &Node) -> Result<QuestionnaireResponse, ParseError> {
    let mut items = Vec::new();
    collect_answers(root, &mut items)?;
    Ok(QuestionnaireResponse {
        resource_id: root.req_str("id")?.to_string(),
        subject_id: subject_id(root)?,
        questionnaire_ref: root
            .opt_str("questionnaire")?
            .unwrap_or_default()
            .to_string(),
        authored: root
            .timestamp("authored")?
            .ok_or_else(|| ParseError::schema("authored", "required field missing"))?,
        items,
    })
}

fn ordinal_from_extensions(node: &Node) -> Result<Option<i64>, ParseError> {
    for ext in node.objects("extension")? {
        let url = ext.opt_str("url")?.unwrap_or_default();
        if !(url.ends_with("ordinalValue") || url.ends_with("itemWeight")) {
            continue;
        }
        let value = match ext.opt_num("valueInteger")? {
            Some(v) => v,
            None => ext.req_num("valueDecimal")?,
        };
        if value.fract() != 0.0 {
            return Err(ParseError::schema(
                ext.path.clone(),
                "ordinal value must be an integer",
            ));
        }
        return Ok(Some(value as i64));
    }
    Ok(None)
}

fn collect_questions(node: &Node, out: &mut Vec<QuestionDefinition>) -> Result<(), ParseError> {
    for item in node.objects("item")? {
        let mut answer_options = Vec::new();
        for opt in item.objects("answerOption")? {
            let option = if let Some(coding) = opt.opt_obj("valueCoding")? {
                let c = parse_coding(&coding)?;
                let ordinal = match ordinal_from_extensions(&opt)? {
                    Some(o) => Some(o),
                    None => ordinal_from_extensions(&coding)?,
                };
                AnswerOption {
                    display: c.display.unwrap_or_else(|| c.code.clone()),
                    code: c.code,
                    ordinal,
                }
            } else if let Some(s) = opt.opt_str("valueString")? {
                AnswerOption {
                    code: s.to_string(),
                    display: s.to_string(),
                    ordinal: ordinal_from_extensions(&opt)?,
                }
            } else {
                return Err(ParseError::schema(
                    opt.child_path("value[x]"),
                    "expected valueCoding or valueString",
                ));
            };
            answer_options.push(option);
        }
        out.push(QuestionDefinition {
            link_id: item.req_str("linkId")?.to_string(),
            text: item.opt_str("text")?.unwrap_or_default().to_string(),
            answer_options,
        });
        collect_questions(&item, out)?;
    }
    Ok(())
}

fn parse_questionnaire(root: &Node) -> Result<QuestionnaireDefinition, ParseError> {
    let questionnaire_ref = match root.opt_str("url")? {
        Some(url) => url.to_string(),
        None => format!("Questionnaire/{}", root.req_str("id")?),
    };
    let title = match root.opt_str("title")? {
        Some(t) => t,
        None => root.opt_str("name")?.unwrap_or_default(),
    };
    let mut items = Vec::new();
    collect_questions(root, &mut items)?;
    Ok(QuestionnaireDefinition {
        questionnaire_ref,
        title: title.to_string(),
        items,
    })
}

fn parse_patient(root: &Node) -> Result<PatientRecord, ParseError> {
    let birth_date = match root.opt_str("birthDate")? {
        None => None,
        Some(s) => Some(
            parse_date(s).ok_or_else(|| ParseError::schema("birthDate", "expected YYYY-MM-DD"))?,
        ),
    };
    let mut demographics = BTreeMap::new();
    if let Some(g) = root.opt_str("gender")? {
        demographics.insert("gender".to_string(), g.to_string());
    }
    Ok(PatientRecord {
        subject_id: root.req_str("id")?.to_string(),
        birth_date,
        demographics,
    })
}

fn coding_json(c: &Coding) -> Value {
    let mut v = json!({ "system": c.system, "code": c.code });
    if let Some(d) = &c.display {
        v["display"] = json!(d);
    }
    v
}

fn concept_json(codings: &[Coding]) -> Value {
    json!({ "coding": codings.iter().map(coding_json).collect::<Vec<_>>() })
}

fn quantity_json(q: &Quantity) -> Value {
    json!({ "value": q.value, "unit": q.unit })
}

fn sampled_json(sd: &SampledData) -> Value {
    json!({
        "origin": quantity_json(&sd.origin),
        "period": sd.period_ms,
        "factor": sd.factor,
        "dimensions": sd.dimensions,
        "data": sd.data,
    })
}

/// Renders a resource back into FHIR JSON.
///
/// Only the supported subset is emitted, so parsing the output yields an
/// equal [`Resource`].
pub fn to_fhir_json(resource: &Resource) -> Value {
    match resource {
        Resource::Observation(o) => {
            let mut v = json!({
                "resourceType": "Observation",
                "id": o.resource_id,
                "status": "final",
                "subject": { "reference": format!("Patient/{}", o.subject_id) },
                "code": concept_json(&o.code),
            });
            match o.effective_end {
                Some(end) => {
                    v["effectivePeriod"] = json!({
                        "start": format_timestamp(&o.effective_start),
                        "end": format_timestamp(&end),
                    })
                }
                None => v["effectiveDateTime"] = json!(format_timestamp(&o.effective_start)),
            }
            if let Some(q) = &o.value_quantity {
                v["valueQuantity"] = quantity_json(q);
            }
            if !o.components.is_empty() {
                let comps: Vec<Value> = o
                    .components
                    .iter()
                    .map(|c| {
                        let mut cv = json!({ "code": concept_json(&c.code) });
                        match &c.value {
                            ComponentValue::Quantity(q) => cv["valueQuantity"] = quantity_json(q),
                            ComponentValue::SampledData(sd) => {
                                cv["valueSampledData"] = sampled_json(sd)
                            }
                            ComponentValue::String(s) => cv["valueString"] = json!(s),
                        }
                        cv
                    })
                    .collect();
                v["component"] = json!(comps);
            }
            if let Some(d) = &o.device {
                let mut dv = match d.system.as_str() {
                    DEVICE_REFERENCE_SYSTEM => json!({ "reference": d.code }),
                    DEVICE_DISPLAY_SYSTEM => json!({}),
                    _ => json!({ "identifier": { "system": d.system, "value": d.code } }),
                };
                if let Some(display) = &d.display {
                    dv["display"] = json!(display);
                }
                v["device"] = dv;
            }
            if let Some(c) = &o.category {
                v["category"] = json!([concept_json(std::slice::from_ref(c))]);
            }
            v
        }
        Resource::QuestionnaireResponse(r) => {
            let items: Vec<Value> = r
                .items
                .iter()
                .map(|item| {
                    let mut answer = json!({ "code": item.answer_code });
                    if let Some(t) = &item.answer_text {
                        answer["display"] = json!(t);
                    }
                    let mut iv = json!({
                        "linkId": item.link_id,
                        "answer": [{ "valueCoding": answer }],
                    });
                    if let Some(t) = &item.question_text {
                        iv["text"] = json!(t);
                    }
                    iv
                })
                .collect();
            let mut v = json!({
                "resourceType": "QuestionnaireResponse",
                "id": r.resource_id,
                "status": "completed",
                "subject": { "reference": format!("Patient/{}", r.subject_id) },
                "authored": format_timestamp(&r.authored),
                "item": items,
            });
            if !r.questionnaire_ref.is_empty() {
                v["questionnaire"] = json!(r.questionnaire_ref);
            }
            v
        }
        Resource::Questionnaire(q) => {
            let items: Vec<Value> = q
                .items
                .iter()
                .map(|item| {
                    let options: Vec<Value> = item
                        .answer_options
                        .iter()
                        .map(|o| {
                            let mut ov = json!({
                                "valueCoding": { "code": o.code, "display": o.display },
                            });
                            if let Some(ord) = o.ordinal {
                                ov["extension"] = json!([{
                                    "url": "http://hl7.org/fhir/StructureDefinition/ordinalValue",
                                    "valueDecimal": ord,
                                }]);
                            }
                            ov
                        })
                        .collect();
                    json!({
                        "linkId": item.link_id,
                        "text": item.text,
                        "type": "choice",
                        "answerOption": options,
                    })
                })
                .collect();
            json!({
                "resourceType": "Questionnaire",
                "url": q.questionnaire_ref,
                "title": q.title,
                "status": "active",
                "item": items,
            })
        }
        Resource::Patient(p) => {
            let mut v = json!({ "resourceType": "Patient", "id": p.subject_id });
            if let Some(b) = &p.birth_date {
                v["birthDate"] = json!(format_date(b));
            }
            if let Some(g) = p.demographics.get("gender") {
                v["gender"] = json!(g);
            }
            v
        }
    }
}
