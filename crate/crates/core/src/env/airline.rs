use super::action::ToolCall;
use super::domain::Domain;
use super::state::{
    Cabin, EnvState, Entity, Flight, FlightStatus, FlightType, Passenger, Payment, PaymentMethod, PaymentSource,
    Reservation, ReservationStatus, Segment,
};
use super::EnvError;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

pub(super) const TOOLS: &[&str] = &[
    "get_user_details",
    "get_reservation_details",
    "search_direct_flight",
    "search_onestop_flight",
    "get_flight_status",
    "book_reservation",
    "cancel_reservation",
    "update_reservation_flights",
    "update_reservation_baggages",
    "send_certificate",
    "transfer_to_human_agents",
    "add_travel_note",
];

const BAG_FEE: i64 = 50;
const INSURANCE_FEE: i64 = 30;

#[derive(Deserialize)]
struct FlightRef {
    flight_number: String,
    date: String,
}

#[derive(Deserialize)]
struct PaymentRef {
    payment_id: String,
    amount: i64,
}

struct Args<'a> {
    call: &'a ToolCall,
}

impl<'a> Args<'a> {
    fn str(&self, key: &str) -> &'a str {
        self.call.arguments.get(key).and_then(Value::as_str).unwrap_or_default()
    }

    fn uint(&self, key: &str) -> u32 {
        self.call.arguments.get(key).and_then(Value::as_u64).unwrap_or(0) as u32
    }

    fn parse<T: DeserializeOwned>(&self, key: &str) -> Result<T, EnvError> {
        let v = self.call.arguments.get(key).cloned().unwrap_or(Value::Null);
        serde_json::from_value(v).map_err(|e| self.schema(format!("argument `{key}`: {e}")))
    }

    fn schema(&self, detail: String) -> EnvError {
        EnvError::SchemaViolation { tool: self.call.name.clone(), detail }
    }

    fn invalid(&self, detail: impl Into<String>) -> EnvError {
        EnvError::InvalidArgument { tool: self.call.name.clone(), detail: detail.into() }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("entity serializes")
}

pub(super) fn run(domain: &Domain, state: &mut EnvState, call: &ToolCall) -> Result<Value, EnvError> {
    let a = Args { call };
    match call.name.as_str() {
        "get_user_details" => Ok(to_json(state.user(a.str("user_id"))?)),
        "get_reservation_details" => Ok(to_json(state.reservation(a.str("reservation_id"))?)),
        "search_direct_flight" => {
            let (origin, dest, date) = (a.str("origin"), a.str("destination"), a.str("date"));
            let found: Vec<Value> = flights(state)
                .filter(|f| f.origin == origin && f.destination == dest)
                .filter_map(|f| offer(f, date))
                .collect();
            Ok(Value::Array(found))
        }
        "search_onestop_flight" => {
            let (origin, dest, date) = (a.str("origin"), a.str("destination"), a.str("date"));
            let mut found = Vec::new();
            for first in flights(state).filter(|f| f.origin == origin && f.destination != dest) {
                for second in flights(state).filter(|f| f.origin == first.destination && f.destination == dest) {
                    if first.scheduled_arrival >= second.scheduled_departure {
                        continue;
                    }
                    if let (Some(l1), Some(l2)) = (offer(first, date), offer(second, date)) {
                        found.push(json!({ "via": first.destination, "legs": [l1, l2] }));
                    }
                }
            }
            Ok(Value::Array(found))
        }
        "get_flight_status" => {
            let (number, date) = (a.str("flight_number"), a.str("date"));
            let flight = state.flight(number)?;
            let entry = flight.dates.get(date).ok_or_else(|| EnvError::EntityNotFound {
                kind: "flight date".into(),
                id: format!("{number} on {date}"),
            })?;
            Ok(json!({ "flight_number": number, "date": date, "status": entry.status }))
        }
        "book_reservation" => book(domain, state, &a),
        "cancel_reservation" => cancel(state, &a),
        "update_reservation_flights" => update_flights(state, &a),
        "update_reservation_baggages" => update_baggages(state, &a),
        "send_certificate" => send_certificate(state, &a),
        "transfer_to_human_agents" => Ok(json!({ "status": "transferred", "summary": a.str("summary") })),
        "add_travel_note" => {
            let r = state.reservation_mut(a.str("reservation_id"))?;
            r.note = a.str("note").to_string();
            Ok(to_json(r))
        }
        other => Err(EnvError::UnknownTool(other.to_string())),
    }
}

fn flights(state: &EnvState) -> impl Iterator<Item = &Flight> {
    state.entities.values().filter_map(|e| match e {
        Entity::Flight(f) => Some(f),
        _ => None,
    })
}

fn offer(f: &Flight, date: &str) -> Option<Value> {
    let d = f.dates.get(date)?;
    (d.status == FlightStatus::Available).then(|| {
        json!({
            "flight_number": f.flight_number,
            "origin": f.origin,
            "destination": f.destination,
            "date": date,
            "scheduled_departure": f.scheduled_departure,
            "scheduled_arrival": f.scheduled_arrival,
            "prices": d.prices,
            "available_seats": d.available_seats,
        })
    })
}

/// Looks up an available fare; returns the per-passenger price.
fn fare(state: &EnvState, a: &Args, fr: &FlightRef, cabin: Cabin, seats: u32) -> Result<(Segment, i64), EnvError> {
    let f = state.flight(&fr.flight_number)?;
    let d = f.dates.get(&fr.date).ok_or_else(|| EnvError::EntityNotFound {
        kind: "flight date".into(),
        id: format!("{} on {}", fr.flight_number, fr.date),
    })?;
    if d.status != FlightStatus::Available {
        return Err(a.invalid(format!("flight {} on {} is not available for booking", fr.flight_number, fr.date)));
    }
    let price = d.prices.as_ref().map(|p| *p.get(cabin)).ok_or_else(|| a.invalid("flight has no fares"))?;
    let left = d.available_seats.as_ref().map(|s| *s.get(cabin)).unwrap_or(0);
    if left < seats {
        return Err(a.invalid(format!("only {left} {cabin:?} seats left on {}", fr.flight_number)));
    }
    let seg = Segment {
        flight_number: f.flight_number.clone(),
        date: fr.date.clone(),
        origin: f.origin.clone(),
        destination: f.destination.clone(),
        price,
    };
    Ok((seg, price))
}

fn take_seats(state: &mut EnvState, seg: &Segment, cabin: Cabin, n: u32, release: bool) {
    if let Ok(f) = state.flight_mut(&seg.flight_number) {
        if let Some(seats) = f.dates.get_mut(&seg.date).and_then(|d| d.available_seats.as_mut()) {
            let s = seats.get_mut(cabin);
            *s = if release { *s + n } else { s.saturating_sub(n) };
        }
    }
}

/// Charges `amount` to a stored payment method, drawing down balances.
fn charge(state: &mut EnvState, a: &Args, user_id: &str, payment_id: &str, amount: i64) -> Result<(), EnvError> {
    let user = state.user_mut(user_id)?;
    let method = user
        .payment_methods
        .get_mut(payment_id)
        .ok_or_else(|| a.invalid(format!("payment method {payment_id} does not belong to {user_id}")))?;
    match method.source {
        PaymentSource::CreditCard => Ok(()),
        PaymentSource::GiftCard | PaymentSource::Certificate => {
            let balance = method.amount.unwrap_or(0);
            if amount > balance {
                return Err(a.invalid(format!("{payment_id} has balance {balance}, cannot pay {amount}")));
            }
            method.amount = Some(if method.source == PaymentSource::Certificate { 0 } else { balance - amount });
            Ok(())
        }
    }
}

fn book(domain: &Domain, state: &mut EnvState, a: &Args) -> Result<Value, EnvError> {
    let user_id = a.str("user_id").to_string();
    state.user(&user_id)?;
    let flight_type: FlightType = a.parse("flight_type")?;
    let cabin: Cabin = a.parse("cabin")?;
    let refs: Vec<FlightRef> = a.parse("flights")?;
    let passengers: Vec<Passenger> = a.parse("passengers")?;
    let payments: Vec<PaymentRef> = a.parse("payment_methods")?;
    let (total_bags, nonfree) = (a.uint("total_baggages"), a.uint("nonfree_baggages"));
    let insurance = a.call.arguments.get("insurance").and_then(Value::as_bool).unwrap_or(false);
    if refs.is_empty() || passengers.is_empty() {
        return Err(a.invalid("a booking needs at least one flight and one passenger"));
    }
    if nonfree > total_bags {
        return Err(a.invalid("nonfree_baggages exceeds total_baggages"));
    }
    let n = passengers.len() as u32;
    let mut segments = Vec::new();
    let mut per_pax = 0;
    for fr in &refs {
        let (seg, price) = fare(state, a, fr, cabin, n)?;
        per_pax += price;
        segments.push(seg);
    }
    let total = per_pax * i64::from(n) + BAG_FEE * i64::from(nonfree) + if insurance { INSURANCE_FEE * i64::from(n) } else { 0 };
    let paid: i64 = payments.iter().map(|p| p.amount).sum();
    if paid != total {
        return Err(a.invalid(format!("payments add up to {paid}, total price is {total}")));
    }
    for p in &payments {
        charge(state, a, &user_id, &p.payment_id, p.amount)?;
    }
    for seg in &segments {
        take_seats(state, seg, cabin, n, false);
    }
    let id = new_reservation_id(state, a.call);
    let reservation = Reservation {
        reservation_id: id.clone(),
        user_id: user_id.clone(),
        origin: a.str("origin").to_string(),
        destination: a.str("destination").to_string(),
        flight_type,
        cabin,
        flights: segments,
        passengers,
        payment_history: payments.into_iter().map(|p| Payment { payment_id: p.payment_id, amount: p.amount }).collect(),
        created_at: domain.now().format("%Y-%m-%dT%H:%M:%S").to_string(),
        total_baggages: total_bags,
        nonfree_baggages: nonfree,
        insurance,
        status: ReservationStatus::Active,
        note: String::new(),
    };
    let out = to_json(&reservation);
    state.entities.insert(id.clone(), Entity::Reservation(reservation));
    state.user_mut(&user_id)?.reservations.push(id);
    Ok(out)
}

/// Derived from the call and the existing ids so the same booking gets the
/// same id regardless of episode seed.
fn new_reservation_id(state: &EnvState, call: &ToolCall) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
    let mut h = crate::util::fnv1a(super::canonical_json(&call.arguments).as_bytes());
    loop {
        let mut id = String::with_capacity(6);
        let mut x = h;
        for _ in 0..6 {
            id.push(ALPHABET[(x % ALPHABET.len() as u64) as usize] as char);
            x /= ALPHABET.len() as u64;
        }
        if !state.entities.contains_key(&id) {
            return id;
        }
        h = crate::util::fnv1a(&h.to_le_bytes());
    }
}

fn cancel(state: &mut EnvState, a: &Args) -> Result<Value, EnvError> {
    let r = state.reservation(a.str("reservation_id"))?.clone();
    if r.status == ReservationStatus::Cancelled {
        return Err(a.invalid(format!("reservation {} is already cancelled", r.reservation_id)));
    }
    let mut refunds = Vec::new();
    for p in r.payment_history.iter().filter(|p| p.amount > 0) {
        refunds.push(Payment { payment_id: p.payment_id.clone(), amount: -p.amount });
        if let Ok(user) = state.user_mut(&r.user_id) {
            if let Some(m) = user.payment_methods.get_mut(&p.payment_id) {
                if m.source == PaymentSource::GiftCard {
                    m.amount = Some(m.amount.unwrap_or(0) + p.amount);
                }
            }
        }
    }
    let n = r.passengers.len() as u32;
    for seg in &r.flights {
        take_seats(state, seg, r.cabin, n, true);
    }
    let res = state.reservation_mut(&r.reservation_id)?;
    res.status = ReservationStatus::Cancelled;
    res.payment_history.extend(refunds);
    Ok(to_json(res))
}

fn update_flights(state: &mut EnvState, a: &Args) -> Result<Value, EnvError> {
    let r = state.reservation(a.str("reservation_id"))?.clone();
    if r.status != ReservationStatus::Active {
        return Err(a.invalid("reservation is not active"));
    }
    let cabin: Cabin = a.parse("cabin")?;
    let refs: Vec<FlightRef> = a.parse("flights")?;
    if refs.is_empty() {
        return Err(a.invalid("at least one flight is required"));
    }
    let n = r.passengers.len() as u32;
    let mut segments = Vec::new();
    for fr in &refs {
        let kept = r.flights.iter().find(|s| s.flight_number == fr.flight_number && s.date == fr.date);
        match kept {
            Some(s) if cabin == r.cabin => segments.push(s.clone()),
            _ => segments.push(fare(state, a, fr, cabin, n)?.0),
        }
    }
    let old: i64 = r.flights.iter().map(|s| s.price).sum();
    let new: i64 = segments.iter().map(|s| s.price).sum();
    let diff = (new - old) * i64::from(n);
    let payment_id = a.str("payment_id").to_string();
    if diff > 0 {
        charge(state, a, &r.user_id, &payment_id, diff)?;
    } else if !state.user(&r.user_id)?.payment_methods.contains_key(&payment_id) {
        return Err(a.invalid(format!("payment method {payment_id} does not belong to {}", r.user_id)));
    }
    for seg in &r.flights {
        take_seats(state, seg, r.cabin, n, true);
    }
    for seg in &segments {
        take_seats(state, seg, cabin, n, false);
    }
    let res = state.reservation_mut(&r.reservation_id)?;
    res.flights = segments;
    res.cabin = cabin;
    if diff != 0 {
        res.payment_history.push(Payment { payment_id, amount: diff });
    }
    Ok(to_json(res))
}

fn update_baggages(state: &mut EnvState, a: &Args) -> Result<Value, EnvError> {
    let r = state.reservation(a.str("reservation_id"))?.clone();
    if r.status != ReservationStatus::Active {
        return Err(a.invalid("reservation is not active"));
    }
    let (total, nonfree) = (a.uint("total_baggages"), a.uint("nonfree_baggages"));
    if nonfree > total {
        return Err(a.invalid("nonfree_baggages exceeds total_baggages"));
    }
    let cost = BAG_FEE * (i64::from(nonfree) - i64::from(r.nonfree_baggages)).max(0);
    let payment_id = a.str("payment_id").to_string();
    if cost > 0 {
        charge(state, a, &r.user_id, &payment_id, cost)?;
    } else if !state.user(&r.user_id)?.payment_methods.contains_key(&payment_id) {
        return Err(a.invalid(format!("payment method {payment_id} does not belong to {}", r.user_id)));
    }
    let res = state.reservation_mut(&r.reservation_id)?;
    res.total_baggages = total;
    res.nonfree_baggages = nonfree;
    if cost > 0 {
        res.payment_history.push(Payment { payment_id, amount: cost });
    }
    Ok(to_json(res))
}

fn send_certificate(state: &mut EnvState, a: &Args) -> Result<Value, EnvError> {
    let amount = a.call.arguments.get("amount").and_then(Value::as_f64).unwrap_or(0.0);
    if amount <= 0.0 || amount.fract() != 0.0 {
        return Err(a.invalid("amount must be a positive whole number"));
    }
    let user = state.user_mut(a.str("user_id"))?;
    let mut k = user.payment_methods.len() + 1;
    let id = loop {
        let candidate = format!("certificate_c{k:03}");
        if !user.payment_methods.contains_key(&candidate) {
            break candidate;
        }
        k += 1;
    };
    let method = PaymentMethod {
        id: id.clone(),
        source: PaymentSource::Certificate,
        amount: Some(amount as i64),
        brand: None,
        last_four: None,
    };
    user.payment_methods.insert(id.clone(), method);
    Ok(json!({ "certificate_id": id, "amount": amount as i64, "user_id": user.user_id }))
}
