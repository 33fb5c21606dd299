use super::dataset::{BenchmarkItem, Gold};
use crate::modules::answer::{normalize_number, round2};
use crate::text::normalize_for_match;
use crate::types::Answer;
use rust_decimal::Decimal;

const NUMERIC_TOLERANCE: Decimal = Decimal::from_parts(1, 0, 0, false, 9);

pub fn score(pred: &Answer, item: &BenchmarkItem) -> bool {
    if pred.is_sentinel() {
        return false;
    }
    match &item.gold {
        Gold::Choice(i) => pred.option_index == Some(*i),
        Gold::Number(gold) => {
            let value = pred.numeric_value.or_else(|| normalize_number(&pred.normalized).map(|(_, v)| v));
            value.is_some_and(|v| (round2(v) - round2(*gold)).abs() <= NUMERIC_TOLERANCE)
        }
        Gold::Text(gold) => normalize_for_match(&pred.normalized) == normalize_for_match(gold),
    }
}
