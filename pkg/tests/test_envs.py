import json

from toolgen.envs import EchoServer, Endpoint, FixtureEnv, Status, canonical_params, fixture_env, http_env
from toolgen.registry import ApiDocument, ApiParameter, from_apis


def _reg():
    req = (ApiParameter("video_id", "id"),)
    return from_apis(
        [
            ApiDocument("Youtube Hub", "Get Video Details", method="GET", required_parameters=req),
            ApiDocument("Notes", "Create Note", method="POST", required_parameters=(ApiParameter("text", "t"),)),
            ApiDocument("Notes", "Missing", method="GET"),
        ]
    )


def test_fixture_exact_match():
    env = fixture_env([(0, {"b": 1, "a": 2}, "hit")])
    assert env.execute(0, {"a": 2, "b": 1}).body == "hit"
    miss = env.execute(0, {"a": 3})
    assert miss.status is Status.TOOL_ERROR and "no fixture" in miss.body
    assert canonical_params({"b": 1, "a": "é"}) == '{"a":"é","b":1}'


def test_fixture_jsonl(tmp_path):
    p = tmp_path / "f.jsonl"
    p.write_text(json.dumps({"tool": "t0", "params": {}, "body": "ok"}) + "\n")
    env = FixtureEnv.from_jsonl(p, lambda n: int(n[1:]))
    assert env.execute(0, {}).status is Status.OK


def test_http_get_post_and_errors():
    reg = _reg()
    with EchoServer() as srv:
        env = http_env(
            reg,
            {
                reg.lookup("Youtube Hub", "Get Video Details").ordinal: {"url_template": srv.url + "/videos/{video_id}"},
                reg.lookup("Notes", "Create Note").ordinal: Endpoint(srv.url + "/notes"),
                reg.lookup("Notes", "Missing").ordinal: Endpoint(srv.url + "/missing"),
            },
        )
        yt = reg.lookup("Youtube Hub", "Get Video Details").ordinal
        r = env.execute(yt, {"video_id": "a b", "lang": "en"})
        assert r.status is Status.OK
        echo = json.loads(r.body)
        assert echo["method"] == "GET" and echo["path"] == "/videos/a%20b" and echo["query"] == {"lang": "en"}

        note = reg.lookup("Notes", "Create Note").ordinal
        echo = json.loads(env.execute(note, {"text": "hi"}).body)
        assert echo["method"] == "POST" and echo["body"] == {"text": "hi"}

        r = env.execute(note, {})
        assert r.status is Status.TOOL_ERROR and "text" in r.body

        r = env.execute(reg.lookup("Notes", "Missing").ordinal, {})
        assert r.status is Status.TOOL_ERROR and r.body.startswith("HTTP 404")


def test_http_unreachable():
    reg = _reg()
    yt = reg.lookup("Youtube Hub", "Get Video Details").ordinal
    env = http_env(reg, {yt: Endpoint("http://127.0.0.1:1/v", timeout_ms=500)})
    r = env.execute(yt, {"video_id": "x"})
    assert r.status is Status.NETWORK_ERROR
    assert r.latency < 5


def test_http_no_endpoint():
    reg = _reg()
    assert http_env(reg, {}).execute(2, {}).status is Status.TOOL_ERROR


def test_fixture_env_from_canonical_map():
    env = fixture_env({(3, canonical_params({"q": "x"})): "body"})
    first, second = env.execute(3, {"q": "x"}), env.execute(3, {"q": "x"})
    assert first == second and first.body == "body"
