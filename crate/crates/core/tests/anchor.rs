mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use common::scripted::{page, png, ScriptedConverter};
use pagebench::anchor::*;
use proptest::prelude::*;

fn layout(blocks: &[(f64, f64, &str)]) -> AnchorLayout {
    AnchorLayout {
        page_width: 612.0,
        page_height: 792.0,
        text_blocks: blocks
            .iter()
            .map(|&(x, y, t)| TextBlock { x, y, text: t.to_string() })
            .collect(),
        image_boxes: vec![],
    }
}

fn sample_page() -> PageInput {
    PageInput {
        layout: layout(&[(72.0, 700.0, "Title"), (72.0, 650.0, "Body text"), (72.0, 40.0, "Page 1")]),
        image_png: Some(png(40, 60)),
    }
}

#[test]
fn transcript_follows_retry_rotation_sequence() {
    let converter = ScriptedConverter::new(vec![
        Ok("not json".into()),
        page("sideways", false, 90),
        Err(ConverterError::Transport("connection reset".into())),
        Err(ConverterError::Truncated),
        page("final text", true, 0),
    ]);
    let out = convert_page(&sample_page(), &converter, &ConverterPolicy::default(), 7).unwrap();
    assert_eq!(out.text, "final text");
    assert!(!out.fallback_used);
    assert_eq!(out.rotation, 90);

    let calls = converter.calls();
    let temps: Vec<f64> = calls.iter().map(|c| c.temperature).collect();
    assert_eq!(temps, vec![0.1, 0.2, 0.3, 0.5, 0.8]);
    let dims: Vec<_> = calls.iter().map(|c| c.image_dims.unwrap()).collect();
    assert_eq!(dims, vec![(40, 60), (40, 60), (60, 40), (60, 40), (60, 40)]);

    let results: Vec<_> = out.attempts.iter().map(|a| a.result.clone()).collect();
    assert!(matches!(results[0], AttemptResult::Invalid(_)));
    assert_eq!(results[1], AttemptResult::Rotate(90));
    assert!(matches!(results[2], AttemptResult::Transport(_)));
    assert_eq!(results[3], AttemptResult::Truncated);
    assert_eq!(results[4], AttemptResult::Accepted);
    let seeds: Vec<u64> = out.attempts.iter().map(|a| a.anchor_seed).collect();
    assert_eq!(seeds, vec![7, 8, 9, 10, 11]);
    assert!(calls[0].prompt.contains("[72,700] Title"));
}

#[test]
fn exhausted_retries_use_the_fallback() {
    let converter = ScriptedConverter::forever(Ok("{}".into()));
    let policy = ConverterPolicy {
        max_retries: 2,
        ..ConverterPolicy::default()
    };
    let out = convert_page(&sample_page(), &converter, &policy, 0).unwrap();
    assert!(out.fallback_used);
    assert_eq!(out.text, "Title\nBody text\nPage 1");
    assert_eq!(converter.calls().len(), 3);
    assert!(!out.warnings.is_empty());

    let converter = ScriptedConverter::forever(Err(ConverterError::Truncated));
    let policy = ConverterPolicy {
        fallback: Fallback::Empty,
        ..policy
    };
    match convert_page(&sample_page(), &converter, &policy, 0) {
        Err(ConvertError::Exhausted { attempts }) => assert_eq!(attempts.len(), 3),
        other => panic!("expected exhaustion, got {other:?}"),
    }
}

#[test]
fn rotation_cycle_is_bounded() {
    let converter = ScriptedConverter::forever(page("still sideways", false, 90));
    let out = convert_page(&sample_page(), &converter, &ConverterPolicy::default(), 0).unwrap();
    assert_eq!(converter.calls().len(), MAX_ROTATIONS as usize + 1);
    assert_eq!(out.text, "still sideways");
    assert_eq!(out.rotation, 270);
    assert!(out.warnings.iter().any(|w| w.contains("misrotated")));
}

#[test]
fn fatal_errors_stop_immediately() {
    let converter = ScriptedConverter::forever(Err(ConverterError::Fatal("HTTP 401".into())));
    let err = convert_page(&sample_page(), &converter, &ConverterPolicy::default(), 0).unwrap_err();
    assert!(matches!(err, ConvertError::Fatal(_)));
    assert_eq!(converter.calls().len(), 1);
}

#[test]
fn tight_budget_halves_the_anchor() {
    let big: Vec<(f64, f64, String)> = (0..400).map(|i| (50.0, i as f64, format!("line {i} {}", "w".repeat(30)))).collect();
    let refs: Vec<(f64, f64, &str)> = big.iter().map(|(x, y, t)| (*x, *y, t.as_str())).collect();
    let page = PageInput {
        layout: layout(&refs),
        image_png: None,
    };
    let policy = ConverterPolicy {
        budget: PromptBudget {
            max_tokens: 1200,
            ..PromptBudget::default()
        },
        ..ConverterPolicy::default()
    };
    let converter = ScriptedConverter::new(vec![page_text_ok()]);
    let out = convert_page(&page, &converter, &policy, 0).unwrap();
    let limit = out.attempts[0].char_limit.unwrap();
    assert_eq!(limit, 3000);
    let prompt = &converter.calls()[0].prompt;
    assert!(policy.budget.fits(prompt));
}

fn page_text_ok() -> Result<String, ConverterError> {
    page("ok", true, 0)
}

#[test]
fn sidecar_round_trip() {
    let l = AnchorLayout {
        page_width: 612.0,
        page_height: 792.0,
        text_blocks: vec![TextBlock {
            x: 10.0,
            y: 20.0,
            text: "a".into(),
        }],
        image_boxes: vec![ImageBox {
            x0: 1.0,
            y0: 2.0,
            x1: 3.0,
            y1: 4.0,
        }],
    };
    let json = serde_json::to_string(&l).unwrap();
    assert_eq!(AnchorLayout::from_sidecar_json(&json).unwrap(), l);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn anchor_respects_limit_and_keeps_ends(
        texts in prop::collection::vec("[a-zA-Z0-9 ]{0,80}", 0..60),
        images in prop::collection::vec((0u16..600, 0u16..800, 1u16..100, 1u16..100), 0..5),
        limit in 0usize..3000,
        seed in any::<u64>(),
    ) {
        let l = AnchorLayout {
            page_width: 612.0,
            page_height: 792.0,
            text_blocks: texts.iter().enumerate().map(|(i, t)| TextBlock { x: 10.0, y: i as f64, text: t.clone() }).collect(),
            image_boxes: images.iter().map(|&(x, y, w, h)| ImageBox {
                x0: x as f64, y0: y as f64, x1: (x + w) as f64, y1: (y + h) as f64,
            }).collect(),
        };
        let anchor = build_anchor(&l, limit, seed);
        prop_assert!(anchor.chars().count() <= limit);
        prop_assert_eq!(&anchor, &build_anchor(&l, limit, seed));
        let header = anchor_header(&l);
        let lines = l.element_lines();
        if !lines.is_empty() && !l.text_blocks.is_empty() {
            let first = &lines[0];
            let last = &lines[l.text_blocks.len() - 1];
            let need = header.chars().count() + first.chars().count()
                + if l.text_blocks.len() > 1 { last.chars().count() } else { 0 };
            if need <= limit {
                prop_assert!(anchor.starts_with(&(header.clone() + first)));
                prop_assert!(anchor.contains(last.as_str()));
            }
        }
    }
}

/// One canned HTTP response per accepted connection; returns the raw requests.
fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body_in = vec![0u8; length];
            reader.read_exact(&mut body_in).unwrap();
            seen.push(head + &String::from_utf8(body_in).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

fn completion(content: &str, finish: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": finish}]
    })
    .to_string()
}

#[test]
fn openai_adapter_maps_responses() {
    let valid = page("from server", true, 0).unwrap();
    let (url, handle) = serve(vec![
        (500, "oops".into()),
        (200, completion("{\"natural_text\":", "length")),
        (401, "{\"error\":\"bad key\"}".into()),
        (200, completion(&valid, "stop")),
    ]);
    let mut conv = OpenAiConverter::new(url, "test-model", Some("secret".into()), Duration::from_secs(10)).unwrap();
    conv.use_schema = true;
    let image = png(4, 4);
    let req = ConverterRequest {
        image_png: Some(&image),
        prompt: "describe",
        temperature: 0.3,
    };
    assert!(matches!(conv.convert(&req), Err(ConverterError::Transport(_))));
    assert_eq!(conv.convert(&req), Err(ConverterError::Truncated));
    assert!(matches!(conv.convert(&req), Err(ConverterError::Fatal(_))));
    assert_eq!(conv.convert(&req).unwrap(), valid);

    let requests = handle.join().unwrap();
    let first = &requests[0];
    assert!(first.to_ascii_lowercase().contains("authorization: bearer secret"));
    let body: serde_json::Value = serde_json::from_str(&first[first.find("\r\n\r\n").unwrap() + 4..]).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.3);
    assert_eq!(body["response_format"]["type"], "json_schema");
    let content = body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(content[0]["text"], "describe");
    assert!(content[1]["image_url"]["url"]
        .as_str()
        .unwrap()
        .starts_with("data:image/png;base64,"));
}
