//! Response extraction, parsing, and rendering.
//!
//! Forecasters wrap their JSON in prose, quote numbers, and append percent
//! signs; [`extract_first_json_object`] and the numeric helpers absorb that.
//! Semantic defects — duplicate stocks, unknown ids, out-of-range confidence,
//! inverted intervals — are surfaced as precise [`ResponseError`] variants and
//! never silently repaired.

use serde_json::{Map, Value};

use super::{DistributionForecast, RankForecast, SentimentForecast};
use crate::error::ResponseError;
use crate::panel::RankVector;

/// Finds the first balanced `{ ... }` run that parses as a JSON object and
/// returns it as a slice of the input.
///
/// The scan respects string literals and escapes inside candidates, so braces
/// in quoted values do not end an object early. Candidates that fail to parse
/// are skipped in favour of later ones; if candidates exist but none parse,
/// the last parse failure is reported as [`ResponseError::MalformedJson`].
/// Input with no balanced run at all (including a `{` that never closes)
/// yields [`ResponseError::NoJsonObject`].
pub fn extract_first_json_object(raw: &str) -> Result<&str, ResponseError> {
    let mut last_err: Option<String> = None;
    let mut start: Option<usize> = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw.char_indices() {
        if start.is_some() && in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '{' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            '}' if start.is_some() => {
                depth -= 1;
                if depth == 0 {
                    let candidate = &raw[start.expect("start set when depth > 0")..=i];
                    match serde_json::from_str::<Value>(candidate) {
                        Ok(Value::Object(_)) => return Ok(candidate),
                        Ok(_) => last_err = Some("not a JSON object".into()),
                        Err(e) => last_err = Some(e.to_string()),
                    }
                    start = None;
                }
            }
            '"' if start.is_some() => in_string = true,
            _ => {}
        }
    }
    match last_err {
        Some(msg) => Err(ResponseError::MalformedJson(msg)),
        None => Err(ResponseError::NoJsonObject),
    }
}

fn parse_object(raw: &str) -> Result<Map<String, Value>, ResponseError> {
    let text = extract_first_json_object(raw)?;
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        _ => unreachable!("extract_first_json_object returns only parseable objects"),
    }
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Coerces a JSON value to `f64`, accepting numbers and numeric strings with
/// an optional trailing `%`. The percent sign is notation, not a rescale:
/// `"5%"` parses to `5.0`.
fn numeric(field: &str, v: &Value) -> Result<f64, ResponseError> {
    let bad = || ResponseError::NonNumericField {
        field: field.into(),
        value: render_value(v),
    };
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(bad),
        Value::String(s) => {
            let trimmed = s.trim();
            let trimmed = trimmed
                .strip_suffix('%')
                .map(str::trim_end)
                .unwrap_or(trimmed);
            trimmed.parse::<f64>().map_err(|_| bad())
        }
        _ => Err(bad()),
    }
}

fn confidence_from(map: &Map<String, Value>) -> Result<f64, ResponseError> {
    let v = map
        .get("confidence")
        .ok_or_else(|| ResponseError::MissingField("confidence".into()))?;
    let c = numeric("confidence", v)?;
    if !(c.is_finite() && (0.0..=1.0).contains(&c)) {
        return Err(ResponseError::ConfidenceOutOfRange(c));
    }
    Ok(c)
}

/// Matches a rank-map value against the prompted ids. Exact matches win;
/// otherwise chart file names are accepted when the value, with underscores
/// read as spaces, starts with an id at a word boundary (`stock_3_12w.svg`
/// resolves to `stock 3`, and `stock 10` is never mistaken for `stock 1`).
fn resolve_stock_id(ids: &[String], v: &Value) -> Result<usize, ResponseError> {
    let raw = render_value(v);
    if let Some(pos) = ids.iter().position(|id| *id == raw) {
        return Ok(pos);
    }
    let normalized = raw.trim().replace('_', " ");
    for (pos, id) in ids.iter().enumerate() {
        if let Some(rest) = normalized.strip_prefix(id.as_str()) {
            if rest.chars().next().is_none_or(|c| !c.is_alphanumeric()) {
                return Ok(pos);
            }
        }
    }
    Err(ResponseError::UnknownStockId(raw))
}

fn rank_map_to_vector(
    rank_map: &Map<String, Value>,
    ids: &[String],
) -> Result<RankVector, ResponseError> {
    let n = ids.len();
    let mut ranks = vec![0u32; n];
    let mut assigned = vec![false; n];
    for (key, v) in rank_map {
        let k: usize = key
            .trim()
            .parse()
            .ok()
            .filter(|k| (1..=n).contains(k))
            .ok_or_else(|| ResponseError::BadRankKey {
                expected: n,
                got: key.clone(),
            })?;
        let pos = resolve_stock_id(ids, v)?;
        if assigned[pos] {
            return Err(ResponseError::DuplicateStockId(ids[pos].clone()));
        }
        assigned[pos] = true;
        // Wire key 1 is the highest predicted return; internally the best
        // stock carries rank n.
        ranks[pos] = (n + 1 - k) as u32;
    }
    if let Some(pos) = assigned.iter().position(|a| !a) {
        return Err(ResponseError::MissingStockId(ids[pos].clone()));
    }
    RankVector::new(ids.to_vec(), ranks).map_err(|e| ResponseError::MalformedJson(e.to_string()))
}

/// Parses a ranking response against the prompted ids.
///
/// Two shapes are accepted: the wrapped form
/// `{"rank": {"1": id, ...}, "confidence": c}` (confidence required) and the
/// flat form `{"1": id, ...}` used for chart prompts, where a missing
/// confidence defaults to `1.0`.
pub fn parse_rank_response(raw: &str, ids: &[String]) -> Result<RankForecast, ResponseError> {
    let map = parse_object(raw)?;
    let (rank_map, confidence) = match map.get("rank") {
        Some(Value::Object(inner)) => (inner.clone(), confidence_from(&map)?),
        Some(other) => {
            return Err(ResponseError::MalformedJson(format!(
                "`rank` field is not an object: {}",
                render_value(other)
            )))
        }
        None => {
            let mut flat = map.clone();
            let confidence = if flat.contains_key("confidence") {
                let c = confidence_from(&flat)?;
                flat.remove("confidence");
                c
            } else {
                1.0
            };
            (flat, confidence)
        }
    };
    let ranking = rank_map_to_vector(&rank_map, ids)?;
    Ok(RankForecast {
        ranking,
        confidence,
    })
}

/// Parses a market-direction response: `{"prediction": p, "confidence": c}`
/// with `p` in `{-1, 0, 1}`.
pub fn parse_sentiment_response(raw: &str) -> Result<SentimentForecast, ResponseError> {
    let map = parse_object(raw)?;
    let v = map
        .get("prediction")
        .ok_or_else(|| ResponseError::MissingField("prediction".into()))?;
    let p = numeric("prediction", v)?;
    if !(p == -1.0 || p == 0.0 || p == 1.0) {
        return Err(ResponseError::InvalidPrediction(p as i64));
    }
    let confidence = confidence_from(&map)?;
    Ok(SentimentForecast {
        prediction: p as i8,
        confidence,
    })
}

/// Parses a distribution response: `{"low": a, "expected": b, "high": c}` in
/// percent units, each value a number or a `%`-suffixed string.
pub fn parse_distribution_response(raw: &str) -> Result<DistributionForecast, ResponseError> {
    let map = parse_object(raw)?;
    let field = |name: &str| -> Result<f64, ResponseError> {
        let v = map
            .get(name)
            .ok_or_else(|| ResponseError::MissingField(name.into()))?;
        let x = numeric(name, v)?;
        if !x.is_finite() {
            return Err(ResponseError::NonNumericField {
                field: name.into(),
                value: render_value(v),
            });
        }
        Ok(x)
    };
    let low = field("low")?;
    let expected = field("expected")?;
    let high = field("high")?;
    if low > expected || expected > high {
        return Err(ResponseError::IntervalOrdering {
            low,
            expected,
            high,
        });
    }
    Ok(DistributionForecast {
        low,
        expected,
        high,
    })
}

fn rank_entries(f: &RankForecast) -> String {
    f.ranking
        .best_to_worst()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            format!(
                "\"{}\":{}",
                i + 1,
                serde_json::to_string(id).expect("strings always serialize")
            )
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Renders the wrapped ranking form. Round-trips exactly through
/// [`parse_rank_response`]: floats use shortest-repr formatting.
pub fn render_rank_response(f: &RankForecast) -> String {
    format!(
        "{{\"rank\":{{{}}},\"confidence\":{}}}",
        rank_entries(f),
        f.confidence
    )
}

/// Renders the flat ranking form used for chart prompts (no confidence).
pub fn render_chart_rank_response(f: &RankForecast) -> String {
    format!("{{{}}}", rank_entries(f))
}

/// Renders a market-direction response.
pub fn render_sentiment_response(f: &SentimentForecast) -> String {
    format!(
        "{{\"prediction\":{},\"confidence\":{}}}",
        f.prediction, f.confidence
    )
}

/// Renders a distribution response with `%`-suffixed string values.
pub fn render_distribution_response(f: &DistributionForecast) -> String {
    format!(
        "{{\"low\":\"{}%\",\"expected\":\"{}%\",\"high\":\"{}%\"}}",
        f.low, f.expected, f.high
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("stock {i}")).collect()
    }

    fn wrapped(order: &[usize], confidence: &str) -> String {
        let entries: Vec<String> = order
            .iter()
            .enumerate()
            .map(|(k, i)| format!("\"{}\":\"stock {}\"", k + 1, i))
            .collect();
        format!(
            "{{\"rank\":{{{}}},\"confidence\":{}}}",
            entries.join(","),
            confidence
        )
    }

    #[test]
    fn extracts_object_from_surrounding_prose() {
        let raw = "Sure! Here is my ranking:\n```json\n{\"a\": 1}\n```\nGood luck!";
        assert_eq!(extract_first_json_object(raw).unwrap(), "{\"a\": 1}");
    }

    #[test]
    fn braces_inside_strings_do_not_close_the_object() {
        let raw = "{\"note\": \"use {curly} braces\", \"a\": 1}";
        assert_eq!(extract_first_json_object(raw).unwrap(), raw);
    }

    #[test]
    fn skips_earlier_non_json_brace_runs() {
        let raw = "prose {not json} more prose {\"a\": 2} end";
        assert_eq!(extract_first_json_object(raw).unwrap(), "{\"a\": 2}");
    }

    #[test]
    fn no_brace_at_all_is_no_json_object() {
        assert_eq!(
            extract_first_json_object("I cannot answer."),
            Err(ResponseError::NoJsonObject)
        );
    }

    #[test]
    fn unclosed_brace_is_no_json_object() {
        assert_eq!(
            extract_first_json_object("{\"rank\": {\"1\": \"stock 4\""),
            Err(ResponseError::NoJsonObject)
        );
    }

    #[test]
    fn balanced_but_invalid_is_malformed() {
        let err = extract_first_json_object("{\"rank\": oops}").unwrap_err();
        assert!(
            matches!(err, ResponseError::MalformedJson(_)),
            "got {err:?}"
        );
    }

    #[test]
    fn parses_wrapped_rank_form() {
        let raw = wrapped(&[3, 1, 2], "0.65");
        let f = parse_rank_response(&raw, &ids(3)).unwrap();
        assert_eq!(f.confidence, 0.65);
        // Key 1 -> stock 3 predicted best -> internal rank 3.
        assert_eq!(f.ranking.rank_of("stock 3"), Some(3));
        assert_eq!(f.ranking.rank_of("stock 1"), Some(2));
        assert_eq!(f.ranking.rank_of("stock 2"), Some(1));
    }

    #[test]
    fn wrapped_form_requires_confidence() {
        let raw = "{\"rank\":{\"1\":\"stock 1\",\"2\":\"stock 2\"}}";
        assert_eq!(
            parse_rank_response(raw, &ids(2)),
            Err(ResponseError::MissingField("confidence".into()))
        );
    }

    #[test]
    fn flat_form_defaults_confidence_to_one() {
        let raw = "{\"1\":\"stock 2\",\"2\":\"stock 1\"}";
        let f = parse_rank_response(raw, &ids(2)).unwrap();
        assert_eq!(f.confidence, 1.0);
        assert_eq!(f.ranking.rank_of("stock 2"), Some(2));
    }

    #[test]
    fn chart_file_names_resolve_to_ids() {
        let raw =
            "{\"1\":\"stock_2_12w.svg\",\"2\":\"stock_10_12w.svg\",\"3\":\"stock_1_12w.svg\",\
                   \"4\":\"stock_3_12w.svg\",\"5\":\"stock_4_12w.svg\",\"6\":\"stock_5_12w.svg\",\
                   \"7\":\"stock_6_12w.svg\",\"8\":\"stock_7_12w.svg\",\"9\":\"stock_8_12w.svg\",\
                   \"10\":\"stock_9_12w.svg\"}";
        let f = parse_rank_response(raw, &ids(10)).unwrap();
        assert_eq!(
            f.ranking.rank_of("stock 2"),
            Some(10),
            "file name must map to stock 2"
        );
        assert_eq!(
            f.ranking.rank_of("stock 10"),
            Some(9),
            "stock 10 must not collide with stock 1"
        );
        assert_eq!(f.ranking.rank_of("stock 1"), Some(8));
    }

    #[test]
    fn duplicate_stock_rejected() {
        let raw =
            "{\"rank\":{\"1\":\"stock 1\",\"2\":\"stock 1\",\"3\":\"stock 3\"},\"confidence\":0.5}";
        assert_eq!(
            parse_rank_response(raw, &ids(3)),
            Err(ResponseError::DuplicateStockId("stock 1".into()))
        );
    }

    #[test]
    fn missing_stock_rejected() {
        // Keys 1..2 only: stock 3 is never placed.
        let raw = "{\"rank\":{\"1\":\"stock 1\",\"2\":\"stock 2\"},\"confidence\":0.5}";
        assert_eq!(
            parse_rank_response(raw, &ids(3)),
            Err(ResponseError::MissingStockId("stock 3".into()))
        );
    }

    #[test]
    fn unknown_stock_rejected() {
        let raw = "{\"rank\":{\"1\":\"stock 9\",\"2\":\"stock 2\"},\"confidence\":0.5}";
        assert_eq!(
            parse_rank_response(raw, &ids(2)),
            Err(ResponseError::UnknownStockId("stock 9".into()))
        );
    }

    #[test]
    fn bad_rank_key_rejected() {
        let raw = "{\"rank\":{\"0\":\"stock 1\",\"2\":\"stock 2\"},\"confidence\":0.5}";
        assert_eq!(
            parse_rank_response(raw, &ids(2)),
            Err(ResponseError::BadRankKey {
                expected: 2,
                got: "0".into()
            })
        );
        let raw = "{\"rank\":{\"1\":\"stock 1\",\"first\":\"stock 2\"},\"confidence\":0.5}";
        assert_eq!(
            parse_rank_response(raw, &ids(2)),
            Err(ResponseError::BadRankKey {
                expected: 2,
                got: "first".into()
            })
        );
    }

    #[test]
    fn confidence_out_of_range_rejected_not_clamped() {
        let raw = wrapped(&[1, 2], "1.4");
        assert_eq!(
            parse_rank_response(&raw, &ids(2)),
            Err(ResponseError::ConfidenceOutOfRange(1.4))
        );
    }

    #[test]
    fn quoted_confidence_accepted() {
        let raw = wrapped(&[1, 2], "\"0.8\"");
        assert_eq!(parse_rank_response(&raw, &ids(2)).unwrap().confidence, 0.8);
    }

    #[test]
    fn non_numeric_confidence_named() {
        let raw = wrapped(&[1, 2], "\"high\"");
        assert_eq!(
            parse_rank_response(&raw, &ids(2)),
            Err(ResponseError::NonNumericField {
                field: "confidence".into(),
                value: "high".into()
            })
        );
    }

    #[test]
    fn parses_sentiment_and_rejects_bad_prediction() {
        let f = parse_sentiment_response("{\"prediction\": -1, \"confidence\": 0.7}").unwrap();
        assert_eq!((f.prediction, f.confidence), (-1, 0.7));
        assert_eq!(
            parse_sentiment_response("{\"prediction\": 2, \"confidence\": 0.7}"),
            Err(ResponseError::InvalidPrediction(2))
        );
        assert_eq!(
            parse_sentiment_response("{\"confidence\": 0.7}"),
            Err(ResponseError::MissingField("prediction".into()))
        );
    }

    #[test]
    fn distribution_accepts_numbers_and_percent_strings() {
        let a = parse_distribution_response("{\"low\": -4.5, \"expected\": 1, \"high\": 6.25}")
            .unwrap();
        let b = parse_distribution_response(
            "{\"low\": \"-4.5%\", \"expected\": \"1 %\", \"high\": \"6.25%\"}",
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.low, -4.5);
        assert_eq!(a.high, 6.25);
    }

    #[test]
    fn distribution_interval_ordering_enforced() {
        assert_eq!(
            parse_distribution_response("{\"low\": 2, \"expected\": 1, \"high\": 6}"),
            Err(ResponseError::IntervalOrdering {
                low: 2.0,
                expected: 1.0,
                high: 6.0
            })
        );
        assert_eq!(
            parse_distribution_response("{\"low\": 0, \"expected\": 7, \"high\": 6}"),
            Err(ResponseError::IntervalOrdering {
                low: 0.0,
                expected: 7.0,
                high: 6.0
            })
        );
    }

    #[test]
    fn renders_round_trip_exactly() {
        let ids = ids(10);
        let ranking = RankVector::new(ids.clone(), vec![4, 9, 1, 7, 2, 10, 3, 8, 5, 6]).unwrap();
        let f = RankForecast {
            ranking,
            confidence: 0.37,
        };
        let back = parse_rank_response(&render_rank_response(&f), &ids).unwrap();
        assert_eq!(back, f);
        let mut flat = f.clone();
        flat.confidence = 1.0;
        let back = parse_rank_response(&render_chart_rank_response(&flat), &ids).unwrap();
        assert_eq!(back, flat);

        let s = SentimentForecast {
            prediction: 0,
            confidence: 0.55,
        };
        assert_eq!(
            parse_sentiment_response(&render_sentiment_response(&s)).unwrap(),
            s
        );

        let d = DistributionForecast {
            low: -4.1,
            expected: 0.9123,
            high: 6.0,
        };
        assert_eq!(
            parse_distribution_response(&render_distribution_response(&d)).unwrap(),
            d
        );
    }
}
