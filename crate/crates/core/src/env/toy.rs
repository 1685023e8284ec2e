use super::action::ToolCall;
use super::state::{EnvState, OrderStatus};
use super::EnvError;
use serde_json::{json, Value};

pub(super) const TOOLS: &[&str] = &["lookup_customer", "get_order", "issue_refund", "cancel_order", "escalate_ticket"];

pub(super) fn run(state: &mut EnvState, call: &ToolCall) -> Result<Value, EnvError> {
    let arg = |k: &str| call.arguments.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
    let invalid = |detail: &str| EnvError::InvalidArgument { tool: call.name.clone(), detail: detail.to_string() };
    match call.name.as_str() {
        "lookup_customer" => Ok(serde_json::to_value(state.customer(&arg("customer_id"))?).expect("serializes")),
        "get_order" => Ok(serde_json::to_value(state.order(&arg("order_id"))?).expect("serializes")),
        "issue_refund" => {
            let o = state.order_mut(&arg("order_id"))?;
            if o.status != OrderStatus::Delivered {
                return Err(invalid("only delivered orders can be refunded"));
            }
            o.status = OrderStatus::Refunded;
            o.refunded_amount = o.amount;
            Ok(json!({ "order_id": o.order_id, "refunded_amount": o.refunded_amount }))
        }
        "cancel_order" => {
            let o = state.order_mut(&arg("order_id"))?;
            if o.status == OrderStatus::Refunded {
                return Err(invalid("refunded orders cannot be cancelled"));
            }
            o.status = OrderStatus::Cancelled;
            Ok(json!({ "order_id": o.order_id, "status": o.status }))
        }
        "escalate_ticket" => {
            let o = state.order_mut(&arg("order_id"))?;
            o.escalation_count += 1;
            Ok(json!({ "order_id": o.order_id, "escalation_count": o.escalation_count }))
        }
        other => Err(EnvError::UnknownTool(other.to_string())),
    }
}
