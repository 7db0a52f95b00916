#![allow(dead_code)]

use std::path::Path;

use mediator_core::scenario::Scenario;
use mediator_server::{serve, ServerHandle, ServiceConfig};
use reqwest::{Method, StatusCode};
use serde_json::Value;
use tempfile::TempDir;

pub const TOKEN: &str = "test-token";

pub fn config_for(dir: &Path) -> ServiceConfig {
    let script = dir.join("script.json");
    if !script.exists() {
        let s = serde_json::to_string(&Scenario::reference().mock_script).unwrap();
        std::fs::write(&script, s).unwrap();
    }
    let file = format!(
        "bind = \"127.0.0.1:0\"\nauth_token = \"{TOKEN}\"\ndata_dir = \"{}\"\nprovider = \"mock\"\n\
         mock_script = \"{}\"\nfsync = false\nsnapshot_every = 10\n",
        dir.join("data").display(),
        script.display()
    );
    ServiceConfig::from_sources(&file, std::iter::empty()).unwrap()
}

pub struct Server {
    pub handle: ServerHandle,
    pub base: String,
    pub client: reqwest::Client,
}

impl Server {
    pub async fn start(dir: &Path) -> Server {
        let handle = serve(config_for(dir)).await.expect("server starts");
        let base = format!("http://{}", handle.local_addr);
        Server {
            handle,
            base,
            client: reqwest::Client::new(),
        }
    }

    pub fn ws_url(&self, path: &str) -> String {
        format!("ws://{}{}", self.handle.local_addr, path)
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self
            .client
            .request(method, format!("{}{}", self.base, path))
            .bearer_auth(TOKEN);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.expect("request sent");
        let status = resp.status();
        let text = resp.text().await.unwrap();
        let v = serde_json::from_str(&text).unwrap_or(Value::String(text));
        (status, v)
    }

    pub async fn get(&self, path: &str) -> Value {
        let (status, v) = self.call(Method::GET, path, None).await;
        assert!(status.is_success(), "GET {path}: {status} {v}");
        v
    }

    pub async fn post(&self, path: &str, body: Value) -> Value {
        let (status, v) = self.call(Method::POST, path, Some(body)).await;
        assert!(status.is_success(), "POST {path}: {status} {v}");
        v
    }
}

pub fn tempdir() -> TempDir {
    tempfile::tempdir().unwrap()
}
