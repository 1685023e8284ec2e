use super::action::ToolCall;
use super::state::{Cabin, EnvState, FlightStatus, Membership, PaymentSource};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::str::FromStr;

/// Domain policy rules. Each rule is a predicate over the pre-call state and
/// the call; the environment enforces the subset flagged `enforced` in the
/// fixture, and the verifier evaluates whichever rules a checker focuses on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    BasicEconomyMod,
    CancelAlreadyFlown,
    #[serde(rename = "cancellation_24h")]
    Cancellation24h,
    CertificateLimit,
    GiftCardLimit,
    #[serde(rename = "passenger_max_5")]
    PassengerMax5,
    BaggageAddOnly,
    CompensationMembership,
}

impl RuleId {
    pub const ALL: [RuleId; 8] = [
        RuleId::BasicEconomyMod,
        RuleId::CancelAlreadyFlown,
        RuleId::Cancellation24h,
        RuleId::CertificateLimit,
        RuleId::GiftCardLimit,
        RuleId::PassengerMax5,
        RuleId::BaggageAddOnly,
        RuleId::CompensationMembership,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::BasicEconomyMod => "basic_economy_mod",
            RuleId::CancelAlreadyFlown => "cancel_already_flown",
            RuleId::Cancellation24h => "cancellation_24h",
            RuleId::CertificateLimit => "certificate_limit",
            RuleId::GiftCardLimit => "gift_card_limit",
            RuleId::PassengerMax5 => "passenger_max_5",
            RuleId::BaggageAddOnly => "baggage_add_only",
            RuleId::CompensationMembership => "compensation_membership",
        }
    }

    /// Returns a violation description when `call`, issued against `state`,
    /// breaks this rule. Calls the rule does not govern always pass, as do
    /// calls whose targets cannot be resolved (those fail elsewhere).
    pub fn violation(self, state: &EnvState, call: &ToolCall, now: NaiveDateTime) -> Option<String> {
        let args = &call.arguments;
        let s = |k: &str| args.get(k).and_then(Value::as_str).unwrap_or_default();
        match (self, call.name.as_str()) {
            (RuleId::BasicEconomyMod, "update_reservation_flights" | "update_reservation_baggages") => {
                let r = state.reservation(s("reservation_id")).ok()?;
                (r.cabin == Cabin::BasicEconomy)
                    .then(|| format!("reservation {} is basic economy and cannot be modified", r.reservation_id))
            }
            (RuleId::CancelAlreadyFlown, "cancel_reservation") => {
                let r = state.reservation(s("reservation_id")).ok()?;
                r.flights.iter().find_map(|seg| {
                    let status = state.flight(&seg.flight_number).ok()?.dates.get(&seg.date)?.status;
                    matches!(status, FlightStatus::Landed | FlightStatus::Flying).then(|| {
                        format!("segment {} on {} has already been flown", seg.flight_number, seg.date)
                    })
                })
            }
            (RuleId::Cancellation24h, "cancel_reservation") => {
                let r = state.reservation(s("reservation_id")).ok()?;
                let recent = NaiveDateTime::parse_from_str(&r.created_at, "%Y-%m-%dT%H:%M:%S")
                    .map(|created| now.signed_duration_since(created).num_hours() < 24)
                    .unwrap_or(false);
                let airline_cancelled = r.flights.iter().any(|seg| {
                    state
                        .flight(&seg.flight_number)
                        .ok()
                        .and_then(|f| f.dates.get(&seg.date))
                        .map(|d| d.status == FlightStatus::Cancelled)
                        .unwrap_or(false)
                });
                let allowed = recent || airline_cancelled || r.cabin == Cabin::Business || r.insurance;
                (!allowed).then(|| {
                    format!(
                        "reservation {} was booked over 24h ago without insurance, business cabin or an airline cancellation",
                        r.reservation_id
                    )
                })
            }
            (RuleId::CertificateLimit, "book_reservation") => {
                let n = count_sources(state, call, PaymentSource::Certificate);
                (n > 1).then(|| format!("{n} certificates used; at most 1 allowed"))
            }
            (RuleId::GiftCardLimit, "book_reservation") => {
                let n = count_sources(state, call, PaymentSource::GiftCard);
                (n > 3).then(|| format!("{n} gift cards used; at most 3 allowed"))
            }
            (RuleId::PassengerMax5, "book_reservation") => {
                let n = args.get("passengers").and_then(Value::as_array).map(Vec::len).unwrap_or(0);
                (n > 5).then(|| format!("{n} passengers; at most 5 allowed"))
            }
            (RuleId::BaggageAddOnly, "update_reservation_baggages") => {
                let r = state.reservation(s("reservation_id")).ok()?;
                let requested = args.get("total_baggages").and_then(Value::as_u64)?;
                (requested < u64::from(r.total_baggages)).then(|| {
                    format!("baggage would decrease from {} to {requested}", r.total_baggages)
                })
            }
            (RuleId::CompensationMembership, "send_certificate") => {
                let u = state.user(s("user_id")).ok()?;
                (u.membership == Membership::Regular)
                    .then(|| format!("user {} is a regular member and not eligible for compensation", u.user_id))
            }
            _ => None,
        }
    }
}

fn count_sources(state: &EnvState, call: &ToolCall, source: PaymentSource) -> usize {
    let Some(user) = call.arguments.get("user_id").and_then(Value::as_str).and_then(|u| state.user(u).ok()) else {
        return 0;
    };
    call.arguments
        .get("payment_methods")
        .and_then(Value::as_array)
        .map(|pms| {
            pms.iter()
                .filter_map(|p| p.get("payment_id").and_then(Value::as_str))
                .filter(|id| user.payment_methods.get(*id).map(|m| m.source == source).unwrap_or(false))
                .count()
        })
        .unwrap_or(0)
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown policy rule `{0}`")]
pub struct UnknownRule(pub String);

impl FromStr for RuleId {
    type Err = UnknownRule;

    /// Accepts canonical ids plus the long policy-focus names used in
    /// scenario seeds (e.g. `passenger_max_five_limit`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let id = match s.trim() {
            "basic_economy_mod" | "basic_economy_modification_prohibition" => RuleId::BasicEconomyMod,
            "cancel_already_flown" => RuleId::CancelAlreadyFlown,
            "cancellation_24h" | "cancellation_24h_rule" => RuleId::Cancellation24h,
            "certificate_limit" => RuleId::CertificateLimit,
            "gift_card_limit" => RuleId::GiftCardLimit,
            "passenger_max_5" | "passenger_max_five" | "passenger_max_five_limit" => RuleId::PassengerMax5,
            "baggage_add_only" | "baggage_addition_only" => RuleId::BaggageAddOnly,
            "compensation_membership" | "compensation_membership_requirement" => RuleId::CompensationMembership,
            other => return Err(UnknownRule(other.to_string())),
        };
        Ok(id)
    }
}
