mod support;

#[test]
fn pit_add_face_is_idempotent() {
    support::pit_face_idempotence(1000).unwrap();
}

#[test]
fn content_store_keeps_newest() {
    support::cs_freshness(1000).unwrap();
}

#[test]
fn removes_leave_no_continuous_state() {
    support::remove_quiescence(64).unwrap();
}

#[test]
fn delivery_is_fifo_per_query() {
    support::per_qname_fifo(64).unwrap();
}
