//! Point the pipeline at a live chat-completions endpoint instead of the
//! mock. Nothing is sent unless TAPE_ENDPOINT is set; the wire format is a
//! JSON POST with `model`, `temperature`, `max_tokens` and one user message,
//! authenticated by a bearer token from the TAPE_API_KEY environment
//! variable.
//!
//! ```bash
//! TAPE_ENDPOINT=https://api.example.com/v1/chat/completions \
//! TAPE_API_KEY=sk-... cargo run --example custom_endpoint
//! ```

use std::time::Duration;

use tape::llm::{query, HttpTransport, LlmConfig};
use tape::prompt::{build_prompt, resolve_template};
use tape::NodeText;

fn main() {
    let Ok(endpoint) = std::env::var("TAPE_ENDPOINT") else {
        println!("TAPE_ENDPOINT is not set; showing the request that would be sent.\n");
        let template = resolve_template(&[], "ogbn-arxiv").unwrap();
        let node = NodeText {
            node_id: 0,
            title: "Scene Text Recognition with Deep Networks".into(),
            abstract_text: "We study convolutional architectures for reading text in images."
                .into(),
        };
        println!("{}", build_prompt(&node, &template));
        println!("\nSet TAPE_ENDPOINT (and TAPE_API_KEY) to send it for real.");
        return;
    };

    let config = LlmConfig {
        endpoint_url: endpoint,
        model_name: std::env::var("TAPE_MODEL").unwrap_or_else(|_| "gpt-3.5-turbo".into()),
        timeout: Duration::from_secs(60),
        ..LlmConfig::default()
    };
    let template = resolve_template(&[], "ogbn-arxiv").unwrap();
    let node = NodeText {
        node_id: 0,
        title: "Scene Text Recognition with Deep Networks".into(),
        abstract_text: "We study convolutional architectures for reading text in images.".into(),
    };
    let prompt = build_prompt(&node, &template);
    let transport = HttpTransport::new(config.timeout).expect("client");
    match query(&prompt, &config, &transport) {
        Ok(answer) => println!("--- answer ---\n{answer}"),
        Err(e) => eprintln!("query failed: {e}"),
    }
}
