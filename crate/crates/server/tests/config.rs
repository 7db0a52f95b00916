use mediator_server::{ConfigError, LogFormat, ProviderConfig, ServiceConfig};

const BASE: &str = r#"
bind = "127.0.0.1:8080"
auth_token = "secret"
data_dir = "/var/lib/mediator"
provider = "mock"
mock_script = "script.json"
"#;

fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn minimal_file_uses_defaults() {
    let c = ServiceConfig::from_sources(BASE, env(&[])).unwrap();
    assert_eq!(c.bind, "127.0.0.1:8080");
    assert_eq!(c.provider, ProviderConfig::Mock { script: "script.json".into() });
    assert_eq!(c.snapshot_every, 100);
    assert!(c.fsync);
    assert_eq!(c.log_format, LogFormat::Text);
    assert_eq!(c.gateway.max_retries, 3);
}

#[test]
fn each_required_key_is_named_when_missing() {
    for key in ["bind", "auth_token", "data_dir", "provider", "mock_script"] {
        let file: String = BASE.lines().filter(|l| !l.starts_with(&format!("{key} "))).map(|l| format!("{l}\n")).collect();
        let err = ServiceConfig::from_sources(&file, env(&[])).unwrap_err();
        assert_eq!(err, ConfigError::Missing(key));
        assert!(err.to_string().contains(key));
    }
}

#[test]
fn environment_overrides_file() {
    let c = ServiceConfig::from_sources(
        BASE,
        env(&[
            ("MEDIATOR_BIND", "0.0.0.0:9000"),
            ("MEDIATOR_LLM_MAX_RETRIES", "7"),
            ("MEDIATOR_FSYNC", "false"),
            ("MEDIATOR_LOG_FORMAT", "json"),
            ("UNRELATED", "x"),
        ]),
    )
    .unwrap();
    assert_eq!(c.bind, "0.0.0.0:9000");
    assert_eq!(c.gateway.max_retries, 7);
    assert!(!c.fsync);
    assert_eq!(c.log_format, LogFormat::Json);
}

#[test]
fn environment_alone_is_enough() {
    let c = ServiceConfig::from_sources(
        "",
        env(&[
            ("MEDIATOR_BIND", "127.0.0.1:1"),
            ("MEDIATOR_AUTH_TOKEN", "t"),
            ("MEDIATOR_DATA_DIR", "d"),
            ("MEDIATOR_PROVIDER", "openai"),
            ("MEDIATOR_LLM_BASE_URL", "http://localhost:1/v1"),
            ("MEDIATOR_LLM_API_KEY", "k"),
            ("MEDIATOR_LLM_MODEL", "m"),
            ("MEDIATOR_LLM_TIMEOUT_MS", "1500"),
        ]),
    )
    .unwrap();
    match c.provider {
        ProviderConfig::OpenAi { timeout_ms, ref model, .. } => {
            assert_eq!(timeout_ms, 1500);
            assert_eq!(model, "m");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn openai_needs_its_keys() {
    let file = BASE.replace("provider = \"mock\"", "provider = \"openai\"");
    assert_eq!(
        ServiceConfig::from_sources(&file, env(&[])).unwrap_err(),
        ConfigError::Missing("llm_base_url")
    );
}

#[test]
fn bad_values_are_rejected_by_key() {
    let cases = [
        ("MEDIATOR_PROVIDER", "anthropic", "provider"),
        ("MEDIATOR_LLM_MAX_RETRIES", "-1", "llm_max_retries"),
        ("MEDIATOR_SNAPSHOT_EVERY", "0", "snapshot_every"),
        ("MEDIATOR_LOG_FORMAT", "xml", "log_format"),
        ("MEDIATOR_LLM_TEMPERATURE", "warm", "llm_temperature"),
    ];
    for (var, value, key) in cases {
        match ServiceConfig::from_sources(BASE, env(&[(var, value)])) {
            Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key),
            other => panic!("{var}={value}: {other:?}"),
        }
    }
}

#[test]
fn file_must_be_flat_and_known() {
    let nested = format!("{BASE}\n[llm]\nmodel = \"x\"\n");
    assert!(matches!(
        ServiceConfig::from_sources(&nested, env(&[])),
        Err(ConfigError::Invalid { .. })
    ));
    let unknown = format!("{BASE}\ncolour = \"blue\"\n");
    assert_eq!(
        ServiceConfig::from_sources(&unknown, env(&[])).unwrap_err(),
        ConfigError::Unknown("colour".into())
    );
    assert!(matches!(
        ServiceConfig::from_sources("bind = ", env(&[])),
        Err(ConfigError::File { .. })
    ));
}

#[test]
fn typed_toml_values_are_accepted() {
    let file = format!("{BASE}\nsnapshot_every = 5\nllm_temperature = 0.7\nfsync = false\n");
    let c = ServiceConfig::from_sources(&file, env(&[])).unwrap();
    assert_eq!(c.snapshot_every, 5);
    assert!((c.gateway.temperature - 0.7).abs() < 1e-6);
    assert!(!c.fsync);
}
