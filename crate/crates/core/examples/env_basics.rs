//! Tool execution, policy rules and role-local views on the airline fixture.
use serde_json::json;
use tooltrain::env::{Action, Domain, JointAction, Role, ToolCall};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = Domain::airline();
    let state = domain.base_state(0);
    println!("{}: {} tools, {} rules", domain.name(), domain.tools().len(), domain.rules().len());
    println!("mei_thomas_8446 is {:?}", state.user("mei_thomas_8446")?.membership);

    let lookup = ToolCall::new("get_reservation_details", json!({ "reservation_id": "79CKHW" }), Role::Agent);
    let (after, result) = domain.execute_tool(&state, &lookup)?;
    println!("lookup ok={} unchanged={}", result.ok, after.canonical() == state.canonical());

    let cancel = ToolCall::new("cancel_reservation", json!({ "reservation_id": "79CKHW", "reason": "change of plan" }), Role::Agent);
    let (after, _) = domain.execute_tool(&state, &cancel)?;
    println!("79CKHW is now {:?}", after.reservation("79CKHW")?.status);

    let passengers: Vec<_> = (0..6).map(|i| json!({ "first_name": "P", "last_name": format!("{i}"), "dob": "1990-01-01" })).collect();
    let book = ToolCall::new(
        "book_reservation",
        json!({
            "user_id": "mei_thomas_8446", "origin": "SFO", "destination": "BOS", "flight_type": "one_way",
            "cabin": "economy", "flights": [{ "flight_number": "HAT026", "date": "2024-05-17" }],
            "passengers": passengers, "payment_methods": [{ "payment_id": "credit_card_4421", "amount": 1260 }],
            "total_baggages": 0, "nonfree_baggages": 0, "insurance": false
        }),
        Role::Agent,
    );
    println!("six passengers: {}", domain.execute_tool(&state, &book).unwrap_err());
    let bogus = ToolCall::new("frobnicate", json!({}), Role::Agent);
    println!("unknown tool: {}", domain.execute_tool(&state, &bogus).unwrap_err());

    let s1 = domain.apply(&state, &JointAction::single(Role::User, Action::UserMessage("Hi, I need help.".into())))?;
    let (agent, user) = (domain.observe(&s1, Role::Agent), domain.observe(&s1, Role::User));
    println!("turn {}: agent sees {} entries and {} tools, user sees {} entries", s1.turn(), agent.history.len(), agent.tools.len(), user.history.len());
    Ok(())
}
