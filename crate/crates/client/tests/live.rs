use dissect_client::{Client, ClientError, UnitOrder};
use dissect_core::artifacts::{ranking_json, thresholds_json, to_json, RANKING_FILE, THRESHOLDS_FILE};
use dissect_core::dissect::{correlation_scores, fit_thresholds, Estimator, PositivePolicy};
use dissect_core::io::Split;
use dissect_core::report::{inference_report, Axis, Raster};
use dissect_core::synth::{generate, PlantSpec};
use dissect_server::{build_index, router, ServeConfig};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn client_against_live_server() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = PlantSpec::planted_suite(8, [10, 12, 12], 6, 6, 2, (0.9, 0.05), 9);
    spec.patch_size = 12;
    let (dataset, _) = generate(&spec, dir.path()).unwrap();
    let t = fit_thresholds(&dataset, 0.005, Estimator::Exact).unwrap();
    let r = correlation_scores(&dataset, &t, PositivePolicy::GroundTruthPositive).unwrap();
    std::fs::write(dir.path().join(THRESHOLDS_FILE), thresholds_json(&t)).unwrap();
    std::fs::write(dir.path().join(RANKING_FILE), ranking_json(&r)).unwrap();

    let index = build_index(&ServeConfig::new(dir.path())).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(async move { axum::serve(listener, router(std::sync::Arc::new(index))).await });

    let client = Client::new(&format!("http://{addr}")).unwrap();
    let units = client.units(UnitOrder::Correlation, 0, Some(3)).await.unwrap();
    assert_eq!(units.units.iter().map(|u| u.k).collect::<Vec<_>>(), r.order[..3]);
    assert_eq!(client.unit(r.order[0]).await.unwrap().summary.rank, 1);

    let samples = client.samples(0, None, Split::All).await.unwrap();
    assert_eq!(samples.total, 12);
    let detail = client.sample("syn00000").await.unwrap();
    assert_eq!(detail.patch_shape, Some([12, 12, 12]));

    let report = client.relevance("syn00000", 4, Axis::Coronal).await.unwrap();
    let direct = inference_report("syn00000", &dataset, &t, &r, 4, Axis::Coronal).unwrap();
    assert_eq!(report, direct);
    assert_eq!(to_json(&report), to_json(&direct));

    let top = client.top_samples(r.order[0], 2, true).await.unwrap();
    assert_eq!(top.samples.len(), 2);
    let png = client.overlay_png("syn00000", 1, Axis::Axial, 3, Some(0.8)).await.unwrap();
    assert_eq!(Raster::from_png(&png).unwrap().width, 12);
    let png = client.patch_png("syn00000", Axis::Sagittal, 0).await.unwrap();
    assert_eq!(Raster::from_png(&png).unwrap().height, 12);

    match client.unit(99).await {
        Err(e @ ClientError::Api { .. }) => assert_eq!(e.status(), Some(404)),
        other => panic!("{other:?}"),
    }
    match client.sample("nope").await {
        Err(ClientError::Api { status, body }) => assert_eq!((status, body.error.as_str()), (404, "not_found")),
        other => panic!("{other:?}"),
    }
    server.abort();
}
