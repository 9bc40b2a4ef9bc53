//! Exact token-cost accounting.
//!
//! Prices and costs are rational numbers, never floats, so ledger totals are
//! additive without drift: summing any partition of the entries gives exactly
//! the grand total.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

/// An exact monetary amount. The currency code is carried separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Money(Ratio<i128>);

impl Money {
    pub fn zero() -> Self {
        Money(Ratio::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn from_integer(n: i128) -> Self {
        Money(Ratio::from_integer(n))
    }

    /// Cost of a token count at a per-million-tokens price.
    pub fn per_million(price: Money, tokens: u64) -> Money {
        Money(price.0 * Ratio::new(tokens as i128, 1_000_000))
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// Renders the exact value. Decimal whenever the reduced denominator is a
    /// product of twos and fives (always the case for token costs), otherwise
    /// a plain fraction.
    pub fn render(&self) -> String {
        let num = *self.0.numer();
        let den = *self.0.denom();
        if den == 1 {
            return num.to_string();
        }
        let mut twos = 0u32;
        let mut fives = 0u32;
        let mut rest = den;
        while rest % 2 == 0 {
            rest /= 2;
            twos += 1;
        }
        while rest % 5 == 0 {
            rest /= 5;
            fives += 1;
        }
        if rest != 1 {
            return format!("{num}/{den}");
        }
        let digits = twos.max(fives);
        let scale = 10i128.pow(digits);
        let scaled = num * (scale / den);
        let sign = if scaled < 0 { "-" } else { "" };
        let abs = scaled.unsigned_abs();
        let int = abs / scale.unsigned_abs();
        let mut frac = format!(
            "{:0width$}",
            abs % scale.unsigned_abs(),
            width = digits as usize
        );
        while frac.ends_with('0') {
            frac.pop();
        }
        if frac.is_empty() {
            format!("{sign}{int}")
        } else {
            format!("{sign}{int}.{frac}")
        }
    }
}

impl FromStr for Money {
    type Err = String;

    /// Parses a plain decimal literal such as `2`, `0.75`, or `-1.25`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (sign, digits) = match s.strip_prefix('-') {
            Some(rest) => (-1i128, rest),
            None => (1i128, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(format!("not a decimal number: {s:?}"));
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(format!("not a decimal number: {s:?}"));
        }
        if frac_part.len() > 18 {
            return Err(format!("too many decimal places: {s:?}"));
        }
        let scale = 10i128.pow(frac_part.len() as u32);
        let int: i128 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|e| format!("{s:?}: {e}"))?
        };
        let frac: i128 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|e| format!("{s:?}: {e}"))?
        };
        Ok(Money(Ratio::new(sign * (int * scale + frac), scale)))
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::zero(), |a, b| a + b)
    }
}

impl Serialize for Money {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One metered exchange: token counts with the cost fixed at record time from
/// the profile's prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub sequence_index: u64,
    pub profile_name: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: Money,
    pub currency: String,
}

/// Append-only per-run cost record.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub entries: Vec<LedgerEntry>,
}

/// Totals for one profile within a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileTotals {
    pub calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: Money,
    pub currency: String,
}

/// Deterministic cost summary: profiles in name order, one currency bucket
/// per ISO code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerReport {
    pub per_profile: BTreeMap<String, ProfileTotals>,
    pub total_calls: u64,
    pub total_tokens_in: u64,
    pub total_tokens_out: u64,
    pub cost_by_currency: BTreeMap<String, Money>,
}

impl CostLedger {
    pub fn new() -> Self {
        CostLedger::default()
    }

    /// Computes the exact cost of one exchange at the given per-million
    /// prices: `tokens_in × price_in/10⁶ + tokens_out × price_out/10⁶`.
    pub fn exchange_cost(price_in: Money, price_out: Money, tokens_in: u64, tokens_out: u64) -> Money {
        Money::per_million(price_in, tokens_in) + Money::per_million(price_out, tokens_out)
    }

    pub fn record(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn total_cost_in(&self, currency: &str) -> Money {
        self.entries
            .iter()
            .filter(|e| e.currency == currency)
            .map(|e| e.cost)
            .sum()
    }

    pub fn report(&self) -> LedgerReport {
        let mut per_profile: BTreeMap<String, ProfileTotals> = BTreeMap::new();
        let mut cost_by_currency: BTreeMap<String, Money> = BTreeMap::new();
        let mut total_in = 0u64;
        let mut total_out = 0u64;
        for e in &self.entries {
            let t = per_profile
                .entry(e.profile_name.clone())
                .or_insert_with(|| ProfileTotals {
                    calls: 0,
                    tokens_in: 0,
                    tokens_out: 0,
                    cost: Money::zero(),
                    currency: e.currency.clone(),
                });
            t.calls += 1;
            t.tokens_in += e.tokens_in;
            t.tokens_out += e.tokens_out;
            t.cost += e.cost;
            total_in += e.tokens_in;
            total_out += e.tokens_out;
            *cost_by_currency
                .entry(e.currency.clone())
                .or_insert_with(Money::zero) += e.cost;
        }
        LedgerReport {
            per_profile,
            total_calls: self.entries.len() as u64,
            total_tokens_in: total_in,
            total_tokens_out: total_out,
            cost_by_currency,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn m(s: &str) -> Money {
        s.parse().unwrap()
    }

    #[test]
    fn half_million_in_plus_hundred_k_out_at_deepseek_prices() {
        // 0.5 × 2 + 0.1 × 8 = 1.8
        let cost = CostLedger::exchange_cost(m("2"), m("8"), 500_000, 100_000);
        assert_eq!(cost, m("1.8"));
        assert_eq!(cost.render(), "1.8");
    }

    #[test]
    fn zero_usage_costs_nothing() {
        let cost = CostLedger::exchange_cost(m("2"), m("8"), 0, 0);
        assert!(cost.is_zero());
        assert_eq!(cost.render(), "0");
    }

    #[test]
    fn split_usage_sums_to_combined_cost() {
        let a = CostLedger::exchange_cost(m("2"), m("8"), 100_000, 0);
        let b = CostLedger::exchange_cost(m("2"), m("8"), 0, 100_000);
        let both = CostLedger::exchange_cost(m("2"), m("8"), 100_000, 100_000);
        assert_eq!(a + b, both);
    }

    #[test]
    fn single_token_cost_is_exact() {
        let cost = CostLedger::exchange_cost(m("2"), m("8"), 1, 0);
        assert_eq!(cost.render(), "0.000002");
    }

    #[test]
    fn partition_sums_match_total_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut ledger = CostLedger::new();
        for i in 0..100 {
            let tin = rng.gen_range(0..2_000_000u64);
            let tout = rng.gen_range(0..500_000u64);
            ledger.record(LedgerEntry {
                sequence_index: i,
                profile_name: "p".into(),
                tokens_in: tin,
                tokens_out: tout,
                cost: CostLedger::exchange_cost(m("0.75"), m("7.5"), tin, tout),
                currency: "RMB".into(),
            });
        }
        let total = ledger.total_cost_in("RMB");
        // any split point: left sum + right sum = total, exactly
        for split in [0usize, 1, 17, 50, 99, 100] {
            let left: Money = ledger.entries[..split].iter().map(|e| e.cost).sum();
            let right: Money = ledger.entries[split..].iter().map(|e| e.cost).sum();
            assert_eq!(left + right, total);
        }
        // and interleaved partitions too
        let evens: Money = ledger
            .entries
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == 0)
            .map(|(_, e)| e.cost)
            .sum();
        let odds: Money = ledger
            .entries
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == 1)
            .map(|(_, e)| e.cost)
            .sum();
        assert_eq!(evens + odds, total);
    }

    #[test]
    fn report_groups_by_profile_and_currency() {
        let mut ledger = CostLedger::new();
        ledger.record(LedgerEntry {
            sequence_index: 0,
            profile_name: "a".into(),
            tokens_in: 500_000,
            tokens_out: 100_000,
            cost: CostLedger::exchange_cost(m("2"), m("8"), 500_000, 100_000),
            currency: "RMB".into(),
        });
        ledger.record(LedgerEntry {
            sequence_index: 1,
            profile_name: "b".into(),
            tokens_in: 1_000_000,
            tokens_out: 0,
            cost: CostLedger::exchange_cost(m("1.25"), m("10"), 1_000_000, 0),
            currency: "USD".into(),
        });
        let report = ledger.report();
        assert_eq!(report.total_calls, 2);
        assert_eq!(report.total_tokens_in, 1_500_000);
        assert_eq!(report.per_profile["a"].cost.render(), "1.8");
        assert_eq!(report.cost_by_currency["USD"].render(), "1.25");
    }

    #[test]
    fn money_parse_and_render_round_trip() {
        for s in ["0", "2", "0.75", "1.8", "0.000002", "-1.25", "10.5"] {
            assert_eq!(m(s).render(), s.trim_start_matches('+'));
        }
        assert_eq!(m("2.0").render(), "2");
        assert_eq!(m("01.80").render(), "1.8");
        assert!("abc".parse::<Money>().is_err());
        assert!("1e6".parse::<Money>().is_err());
        assert!("1.2.3".parse::<Money>().is_err());
        assert!(".".parse::<Money>().is_err());
        assert_eq!(m(".5").render(), "0.5");
    }

    #[test]
    fn money_serde_uses_decimal_strings() {
        let v = serde_json::to_string(&m("1.8")).unwrap();
        assert_eq!(v, "\"1.8\"");
        let back: Money = serde_json::from_str(&v).unwrap();
        assert_eq!(back, m("1.8"));
    }
}
