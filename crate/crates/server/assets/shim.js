(function () {
  "use strict";

  var config = Object.freeze({
    middleOrigin: __MIDDLE_ORIGIN__,
    firstPartyOrigins: __FIRST_PARTY_ORIGINS__,
    inContext: __IN_CONTEXT_PARAM__,
    crossContext: __CROSS_CONTEXT_PARAM__
  });

  // Same escaping as the servers: only unreserved characters stay literal.
  function encodeTarget(s) {
    return encodeURIComponent(s).replace(/[!'()*]/g, function (c) {
      return "%" + c.charCodeAt(0).toString(16).toUpperCase();
    });
  }

  function handleURL(url, kind) {
    var parsed;
    try {
      parsed = new URL(String(url), document.baseURI);
    } catch (e) {
      return url;
    }
    if (parsed.protocol !== "http:" && parsed.protocol !== "https:") return url;
    if (parsed.origin === config.middleOrigin) return url;
    if (config.firstPartyOrigins.indexOf(parsed.origin) !== -1) return url;
    parsed.hash = "";
    return config.middleOrigin + "/?" + kind + "=" + encodeTarget(parsed.href);
  }

  function isThirdParty(origin) {
    return origin !== "null" && origin !== config.middleOrigin &&
      config.firstPartyOrigins.indexOf(origin) === -1;
  }

  function lockProperty(proto, prop, kind) {
    if (!proto) return;
    var desc = Object.getOwnPropertyDescriptor(proto, prop);
    if (!desc || !desc.set) return;
    Object.defineProperty(proto, prop, {
      configurable: false,
      enumerable: desc.enumerable,
      get: desc.get,
      set: function (value) { desc.set.call(this, handleURL(value, kind)); }
    });
  }

  var properties = [
    [window.HTMLScriptElement, "src", config.inContext],
    [window.HTMLImageElement, "src", config.inContext],
    [window.HTMLImageElement, "srcset", null],
    [window.HTMLMediaElement, "src", config.inContext],
    [window.HTMLVideoElement, "poster", config.inContext],
    [window.HTMLSourceElement, "src", config.inContext],
    [window.HTMLTrackElement, "src", config.inContext],
    [window.HTMLEmbedElement, "src", config.inContext],
    [window.HTMLObjectElement, "data", config.inContext],
    [window.HTMLLinkElement, "href", config.inContext],
    [window.HTMLFormElement, "action", config.inContext],
    [window.HTMLIFrameElement, "src", config.crossContext],
    [window.HTMLFrameElement, "src", config.crossContext],
    [window.HTMLAnchorElement, "href", config.crossContext],
    [window.HTMLAreaElement, "href", config.crossContext]
  ];

  function kindFor(element, name) {
    name = String(name).toLowerCase();
    for (var i = 0; i < properties.length; i++) {
      var ctor = properties[i][0];
      if (ctor && element instanceof ctor && properties[i][1].toLowerCase() === name) {
        return properties[i][2];
      }
    }
    return undefined;
  }

  function handleSrcset(value) {
    return String(value).split(",").map(function (candidate) {
      var parts = candidate.trim().split(/\s+/);
      if (parts[0]) parts[0] = handleURL(parts[0], config.inContext);
      return parts.join(" ");
    }).join(", ");
  }

  properties.forEach(function (p) {
    if (p[2] === null) {
      if (!p[0]) return;
      var desc = Object.getOwnPropertyDescriptor(p[0].prototype, p[1]);
      if (!desc || !desc.set) return;
      Object.defineProperty(p[0].prototype, p[1], {
        configurable: false,
        enumerable: desc.enumerable,
        get: desc.get,
        set: function (value) { desc.set.call(this, handleSrcset(value)); }
      });
    } else if (p[0]) {
      lockProperty(p[0].prototype, p[1], p[2]);
    }
  });

  var setAttribute = Element.prototype.setAttribute;
  Object.defineProperty(Element.prototype, "setAttribute", {
    configurable: false,
    value: function (name, value) {
      var kind = kindFor(this, name);
      if (kind === null) value = handleSrcset(value);
      else if (kind) value = handleURL(value, kind);
      return setAttribute.call(this, name, value);
    }
  });

  var attributePattern = /(\s(?:src|href|action|data|poster)\s*=\s*)(["'])([^"']*)\2/gi;
  function rewriteMarkup(markup) {
    return String(markup).replace(attributePattern, function (all, prefix, quote, url) {
      var kind = /^\s*href/i.test(prefix) ? config.crossContext : config.inContext;
      return prefix + quote + handleURL(url, kind) + quote;
    });
  }
  ["write", "writeln"].forEach(function (name) {
    var original = Document.prototype[name];
    Object.defineProperty(Document.prototype, name, {
      configurable: false,
      value: function () {
        var args = Array.prototype.map.call(arguments, rewriteMarkup);
        return original.apply(this, args);
      }
    });
  });

  var open = window.open;
  Object.defineProperty(window, "open", {
    configurable: false,
    value: function (url) {
      var args = Array.prototype.slice.call(arguments);
      if (url !== undefined) args[0] = handleURL(url, config.crossContext);
      return open.apply(this, args);
    }
  });

  var xhrOpen = XMLHttpRequest.prototype.open;
  Object.defineProperty(XMLHttpRequest.prototype, "open", {
    configurable: false,
    value: function (method, url) {
      var args = Array.prototype.slice.call(arguments);
      args[1] = handleURL(url, config.inContext);
      return xhrOpen.apply(this, args);
    }
  });

  if (window.fetch) {
    var fetch = window.fetch;
    Object.defineProperty(window, "fetch", {
      configurable: false,
      value: function (input, init) {
        if (input instanceof Request) input = new Request(handleURL(input.url, config.inContext), input);
        else input = handleURL(input, config.inContext);
        return fetch.call(this, input, init);
      }
    });
  }

  function wrapConstructor(name, kind) {
    var Original = window[name];
    if (!Original) return;
    var Wrapped = function (url, options) {
      return new Original(handleURL(url, kind), options);
    };
    Wrapped.prototype = Original.prototype;
    Object.defineProperty(window, name, { configurable: false, value: Wrapped });
  }
  wrapConstructor("EventSource", config.inContext);
  wrapConstructor("WebSocket", config.inContext);

  var postMessage = window.postMessage;
  function guardedPostMessage(message, targetOrigin) {
    if (typeof targetOrigin === "string" && targetOrigin !== "*" && targetOrigin !== "/") {
      var origin;
      try { origin = new URL(targetOrigin).origin; } catch (e) { return; }
      if (isThirdParty(origin)) return;
    }
    return postMessage.apply(this, arguments);
  }
  Object.defineProperty(window, "postMessage", { configurable: false, value: guardedPostMessage });

  window.addEventListener("message", function (event) {
    if (isThirdParty(event.origin)) event.stopImmediatePropagation();
  }, true);

  Object.defineProperty(window, "__gateway", {
    configurable: false,
    value: Object.freeze({ handleURL: handleURL, config: config })
  });
})();
