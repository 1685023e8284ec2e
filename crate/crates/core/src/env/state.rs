use super::action::HistoryEntry;
use super::{canonical_json, EnvError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Why an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    UserStop,
    Transfer,
    OutOfScope,
    MaxTurns,
    Error,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::UserStop => "user_stop",
            Termination::Transfer => "transfer",
            Termination::OutOfScope => "out_of_scope",
            Termination::MaxTurns => "max_turns",
            Termination::Error => "error",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionMeta {
    pub turn: u64,
    pub terminal: bool,
    pub termination: Option<Termination>,
    pub seed: u64,
    pub history: Vec<HistoryEntry>,
}

/// The user-facing half of a task: what the simulated user knows and wants.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBrief {
    pub task_id: String,
    pub context: String,
    pub reason_for_call: String,
    pub known_info: String,
    pub task_instructions: String,
}

/// Keyed entity database plus interaction metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub domain: String,
    pub entities: BTreeMap<String, Entity>,
    pub interaction_meta: InteractionMeta,
    pub brief: TaskBrief,
}

impl EnvState {
    pub fn turn(&self) -> u64 {
        self.interaction_meta.turn
    }

    pub fn is_terminal(&self) -> bool {
        self.interaction_meta.terminal
    }

    pub fn termination(&self) -> Option<Termination> {
        self.interaction_meta.termination
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.interaction_meta.history
    }

    /// Canonical serialization (sorted keys); equal states serialize identically.
    pub fn canonical(&self) -> String {
        canonical_json(self)
    }

    /// Canonical serialization of the entity database only.
    pub fn entities_canonical(&self) -> String {
        canonical_json(&self.entities)
    }

    /// Sets the terminal flag. A terminal state keeps its first reason.
    pub fn terminate(&mut self, reason: Termination) {
        if !self.interaction_meta.terminal {
            self.interaction_meta.terminal = true;
            self.interaction_meta.termination = Some(reason);
        }
    }

    pub fn user(&self, id: &str) -> Result<&User, EnvError> {
        match self.entities.get(id) {
            Some(Entity::User(u)) => Ok(u),
            _ => Err(not_found("user", id)),
        }
    }

    pub fn user_mut(&mut self, id: &str) -> Result<&mut User, EnvError> {
        match self.entities.get_mut(id) {
            Some(Entity::User(u)) => Ok(u),
            _ => Err(not_found("user", id)),
        }
    }

    pub fn flight(&self, number: &str) -> Result<&Flight, EnvError> {
        match self.entities.get(number) {
            Some(Entity::Flight(f)) => Ok(f),
            _ => Err(not_found("flight", number)),
        }
    }

    pub fn flight_mut(&mut self, number: &str) -> Result<&mut Flight, EnvError> {
        match self.entities.get_mut(number) {
            Some(Entity::Flight(f)) => Ok(f),
            _ => Err(not_found("flight", number)),
        }
    }

    pub fn reservation(&self, id: &str) -> Result<&Reservation, EnvError> {
        match self.entities.get(id) {
            Some(Entity::Reservation(r)) => Ok(r),
            _ => Err(not_found("reservation", id)),
        }
    }

    pub fn reservation_mut(&mut self, id: &str) -> Result<&mut Reservation, EnvError> {
        match self.entities.get_mut(id) {
            Some(Entity::Reservation(r)) => Ok(r),
            _ => Err(not_found("reservation", id)),
        }
    }

    pub fn customer(&self, id: &str) -> Result<&Customer, EnvError> {
        match self.entities.get(id) {
            Some(Entity::Customer(c)) => Ok(c),
            _ => Err(not_found("customer", id)),
        }
    }

    pub fn order(&self, id: &str) -> Result<&Order, EnvError> {
        match self.entities.get(id) {
            Some(Entity::Order(o)) => Ok(o),
            _ => Err(not_found("order", id)),
        }
    }

    pub fn order_mut(&mut self, id: &str) -> Result<&mut Order, EnvError> {
        match self.entities.get_mut(id) {
            Some(Entity::Order(o)) => Ok(o),
            _ => Err(not_found("order", id)),
        }
    }

    /// Checks that every cross-entity reference resolves within the map.
    pub fn check_integrity(&self) -> Result<(), String> {
        let has = |id: &str, want: fn(&Entity) -> bool| self.entities.get(id).map(want).unwrap_or(false);
        for (key, entity) in &self.entities {
            if entity.id() != key {
                return Err(format!("entity keyed `{key}` carries id `{}`", entity.id()));
            }
            match entity {
                Entity::User(u) => {
                    for r in &u.reservations {
                        if !has(r, |e| matches!(e, Entity::Reservation(_))) {
                            return Err(format!("user {} references missing reservation {r}", u.user_id));
                        }
                    }
                }
                Entity::Reservation(r) => {
                    let Some(Entity::User(owner)) = self.entities.get(&r.user_id) else {
                        return Err(format!("reservation {} references missing user {}", r.reservation_id, r.user_id));
                    };
                    for s in &r.flights {
                        if !has(&s.flight_number, |e| matches!(e, Entity::Flight(_))) {
                            return Err(format!(
                                "reservation {} references missing flight {}",
                                r.reservation_id, s.flight_number
                            ));
                        }
                    }
                    for p in &r.payment_history {
                        if !owner.payment_methods.contains_key(&p.payment_id) {
                            return Err(format!(
                                "reservation {} references unknown payment method {}",
                                r.reservation_id, p.payment_id
                            ));
                        }
                    }
                }
                Entity::Customer(c) => {
                    for o in &c.orders {
                        if !has(o, |e| matches!(e, Entity::Order(_))) {
                            return Err(format!("customer {} references missing order {o}", c.customer_id));
                        }
                    }
                }
                Entity::Order(o) => {
                    if !has(&o.customer_id, |e| matches!(e, Entity::Customer(_))) {
                        return Err(format!("order {} references missing customer {}", o.order_id, o.customer_id));
                    }
                }
                Entity::Flight(_) => {}
            }
        }
        Ok(())
    }
}

fn not_found(kind: &str, id: &str) -> EnvError {
    EnvError::EntityNotFound { kind: kind.to_string(), id: id.to_string() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Entity {
    User(User),
    Flight(Flight),
    Reservation(Reservation),
    Customer(Customer),
    Order(Order),
}

impl Entity {
    pub fn id(&self) -> &str {
        match self {
            Entity::User(u) => &u.user_id,
            Entity::Flight(f) => &f.flight_number,
            Entity::Reservation(r) => &r.reservation_id,
            Entity::Customer(c) => &c.customer_id,
            Entity::Order(o) => &o.order_id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Entity::User(_) => "user",
            Entity::Flight(_) => "flight",
            Entity::Reservation(_) => "reservation",
            Entity::Customer(_) => "customer",
            Entity::Order(_) => "order",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Regular,
    Silver,
    Gold,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Name {
    pub first_name: String,
    pub last_name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentSource {
    CreditCard,
    GiftCard,
    Certificate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentMethod {
    pub id: String,
    pub source: PaymentSource,
    /// Remaining balance for gift cards and certificates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_four: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: String,
    pub name: Name,
    pub email: String,
    pub membership: Membership,
    pub payment_methods: BTreeMap<String, PaymentMethod>,
    pub reservations: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightStatus {
    Available,
    Flying,
    Landed,
    Delayed,
    OnTime,
    Cancelled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cabin {
    BasicEconomy,
    Economy,
    Business,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CabinMap<T> {
    pub basic_economy: T,
    pub economy: T,
    pub business: T,
}

impl<T> CabinMap<T> {
    pub fn get(&self, cabin: Cabin) -> &T {
        match cabin {
            Cabin::BasicEconomy => &self.basic_economy,
            Cabin::Economy => &self.economy,
            Cabin::Business => &self.business,
        }
    }

    pub fn get_mut(&mut self, cabin: Cabin) -> &mut T {
        match cabin {
            Cabin::BasicEconomy => &mut self.basic_economy,
            Cabin::Economy => &mut self.economy,
            Cabin::Business => &mut self.business,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightDate {
    pub status: FlightStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<CabinMap<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available_seats: Option<CabinMap<u32>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flight {
    pub flight_number: String,
    pub origin: String,
    pub destination: String,
    pub scheduled_departure: String,
    pub scheduled_arrival: String,
    pub dates: BTreeMap<String, FlightDate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightType {
    OneWay,
    RoundTrip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationStatus {
    Active,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub flight_number: String,
    pub date: String,
    pub origin: String,
    pub destination: String,
    pub price: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passenger {
    pub first_name: String,
    pub last_name: String,
    pub dob: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payment {
    pub payment_id: String,
    pub amount: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub reservation_id: String,
    pub user_id: String,
    pub origin: String,
    pub destination: String,
    pub flight_type: FlightType,
    pub cabin: Cabin,
    pub flights: Vec<Segment>,
    pub passengers: Vec<Passenger>,
    pub payment_history: Vec<Payment>,
    pub created_at: String,
    pub total_baggages: u32,
    pub nonfree_baggages: u32,
    pub insurance: bool,
    pub status: ReservationStatus,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Customer {
    pub customer_id: String,
    pub name: String,
    pub orders: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    Delivered,
    Refunded,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub order_id: String,
    pub customer_id: String,
    pub status: OrderStatus,
    pub amount: i64,
    pub refunded_amount: i64,
    pub escalation_count: u32,
}
