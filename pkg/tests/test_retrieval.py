from datetime import datetime, timedelta

import numpy as np
import pytest

from tsreasoner.errors import EmptyRange, InvalidValue, NetworkBlocked, NetworkDisabledNoFixture, UnknownZone, UpstreamError
from tsreasoner.retrieval import RetrievalClient, RetrievalQuery, parse_eia, parse_open_meteo

T0 = datetime(2023, 1, 1)
NYC = (40.71, -74.01)


def weather(hours=48, variables=("temperature_2m",), start=T0, loc=NYC):
    return RetrievalQuery("weather", loc, start, start + timedelta(hours=hours), variables)


class TestQuery:
    def test_cache_key_ignores_variable_order(self):
        a = weather(variables=("temperature_2m", "relative_humidity_2m"))
        b = weather(variables=("relative_humidity_2m", "temperature_2m"))
        assert a.cache_key() == b.cache_key()
        assert a.cache_key() != weather(hours=24).cache_key()

    def test_validation(self):
        with pytest.raises(InvalidValue):
            weather(hours=0)
        with pytest.raises(InvalidValue):
            weather(loc=(95.0, 0.0))
        with pytest.raises(InvalidValue):
            RetrievalQuery("electricity", " ", T0, T0 + timedelta(hours=1), ("demand",))
        with pytest.raises(InvalidValue):
            RetrievalQuery("traffic", NYC, T0, T0 + timedelta(hours=1), ("x",))


class TestOffline:
    def test_weather_fixture(self, tmp_path):
        client = RetrievalClient(cache_dir=tmp_path)
        f = client.fetch_weather(weather())
        assert len(f) == 48 and f.names == ["temperature_2m"]
        assert client.network_calls == 0

    def test_cache_hit(self, tmp_path):
        client = RetrievalClient(cache_dir=tmp_path)
        q = weather(variables=("temperature_2m", "relative_humidity_2m"))
        first = client.fetch(q)
        key = q.cache_key()
        assert (tmp_path / f"{key}.csv").exists() and (tmp_path / f"{key}.json").exists()
        # a client with no fixtures can only answer from the cache
        cold = RetrievalClient(cache_dir=tmp_path, fixture_dir=tmp_path / "none")
        again = cold.fetch(q)
        np.testing.assert_array_equal(first["temperature_2m"].values, again["temperature_2m"].values)
        assert cold.network_calls == 0

    def test_column_order_follows_query(self, tmp_path):
        client = RetrievalClient(cache_dir=tmp_path)
        client.fetch(weather(variables=("temperature_2m", "relative_humidity_2m")))
        f = client.fetch(weather(variables=("relative_humidity_2m", "temperature_2m")))
        assert f.names == ["relative_humidity_2m", "temperature_2m"]

    def test_electricity_zone(self):
        f = RetrievalClient().fetch_electricity_args("ZONE_A", T0, T0 + timedelta(hours=24), "demand")
        assert len(f) == 24 and f["demand"].values.min() > 0

    def test_unknown_zone(self):
        with pytest.raises(UnknownZone):
            RetrievalClient().fetch_electricity_args("ZONE_Z", T0, T0 + timedelta(hours=24), "demand")

    def test_partial_range_rejected(self):
        with pytest.raises(EmptyRange):
            RetrievalClient().fetch(weather(hours=48, start=datetime(2023, 1, 14)))

    def test_no_fixture(self):
        with pytest.raises(NetworkDisabledNoFixture):
            RetrievalClient().fetch(weather(loc=(51.5, -0.12)))
        with pytest.raises(NetworkDisabledNoFixture):
            RetrievalClient().fetch(weather(variables=("wind_speed_10m",)))

    def test_kind_mismatch(self):
        with pytest.raises(InvalidValue):
            RetrievalClient().fetch_electricity(weather())


def _meteo_payload(hours, start=T0):
    stamps = [(start + timedelta(hours=i)).strftime("%Y-%m-%dT%H:%M") for i in range(hours)]
    return {"hourly": {"time": stamps, "temperature_2m": [float(i) for i in range(hours)]}}


class FakeHttp:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def __call__(self, url, params, timeout):
        self.calls.append((url, params))
        return self.responses.pop(0)


class TestLive:
    def test_parse_open_meteo(self):
        f = parse_open_meteo(_meteo_payload(30), weather(hours=24))
        assert list(f["temperature_2m"].values) == [float(i) for i in range(24)]

    def test_parse_open_meteo_gap(self):
        payload = _meteo_payload(24)
        payload["hourly"]["temperature_2m"][5] = None
        with pytest.raises(EmptyRange):
            parse_open_meteo(payload, weather(hours=24))

    def test_parse_eia(self):
        q = RetrievalQuery("electricity", "PJM", T0, T0 + timedelta(hours=3), ("demand", "demand_forecast"))
        rows = [{"period": f"2023-01-01T{h:02d}", "type": t, "value": v}
                for h in range(3) for t, v in (("D", 100 + h), ("DF", 90 + h), ("NG", 1))]
        f = parse_eia({"response": {"data": rows[::-1]}}, q)
        assert list(f["demand"].values) == [100, 101, 102]
        assert list(f["demand_forecast"].values) == [90, 91, 92]

    def test_parse_eia_empty(self):
        q = RetrievalQuery("electricity", "PJM", T0, T0 + timedelta(hours=3), ("demand",))
        with pytest.raises(EmptyRange):
            parse_eia({"response": {"data": []}}, q)

    def test_live_retries_then_caches(self, tmp_path):
        http = FakeHttp([(503, "busy"), (200, _meteo_payload(24))])
        sleeps = []
        client = RetrievalClient("live", cache_dir=tmp_path, transport=http, sleep=sleeps.append)
        q = weather(hours=24, loc=(51.5, -0.12))
        assert len(client.fetch(q)) == 24
        assert client.network_calls == 2 and sleeps == [0.5]
        assert http.calls[0][1]["hourly"] == "temperature_2m"
        client.fetch(q)
        assert client.network_calls == 2

    def test_live_client_error_not_retried(self):
        http = FakeHttp([(400, {"reason": "bad"})])
        with pytest.raises(UpstreamError):
            RetrievalClient("live", transport=http, sleep=lambda s: None).fetch(weather(hours=24))
        assert len(http.calls) == 1

    def test_offline_never_uses_network(self):
        client = RetrievalClient()
        with pytest.raises(NetworkDisabledNoFixture):
            client.fetch(weather(loc=(0.0, 0.0)))
        assert client.network_calls == 0

    def test_blocked_default_transport(self):
        from tsreasoner.retrieval import blocking_transport
        with pytest.raises(NetworkBlocked):
            blocking_transport("http://example.org", {}, 1.0)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            RetrievalClient("hybrid")
