//! Serves the built-in tools over HTTP and calls them through a gateway whose
//! registry points at the remote address.

use std::collections::BTreeMap;
use std::time::Duration;

use diagflow::gateway::{Payload, ToolGateway, ToolInput, ToolRequest, ToolServer};
use diagflow::plan::{default_registry, Endpoint, ToolDescriptor};
use diagflow::synth;

fn main() -> anyhow::Result<()> {
    let server = ToolServer::spawn(ToolGateway::new(default_registry()), "127.0.0.1:0".parse()?)?;
    println!("tool server at {}", server.url());
    let health = ureq::get(&format!("{}/healthz", server.url())).call()?.body_mut().read_to_string()?;
    println!("healthz: {health}");

    let local = default_registry().into_iter().find(|t| t.tool_id == "fundus_metrics").expect("builtin");
    let remote = ToolDescriptor { endpoint: Endpoint::Remote { address: server.url() }, ..local };
    let client = ToolGateway::new(vec![remote.clone()]);
    let mask = synth::disc_cup_mask(96, 22, 13, 0);
    for action in ["compute_vcdr", "compute_rim_thickness"] {
        let request = ToolRequest {
            request_id: format!("demo:0:{action}"),
            tool_id: remote.tool_id.clone(),
            action: action.into(),
            inputs: vec![ToolInput { name: "mask".into(), type_tag: "mask-2d".into(), payload: Payload::inline(&mask.to_pgm()) }],
            params: BTreeMap::new(),
        };
        let response = client.invoke(&remote, &request, Duration::from_secs(5))?;
        println!("{action}: {}", serde_json::to_string(&response)?);
    }
    Ok(())
}
